#include "ovdlab/boxes.hpp"

#include <algorithm>

namespace ovdlab {

double box_area(const BoxXYXY& b) { return std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]); }

namespace {

double intersection(const BoxXYXY& a, const BoxXYXY& b) {
  const double w = std::min(a[2], b[2]) - std::max(a[0], b[0]);
  const double h = std::min(a[3], b[3]) - std::max(a[1], b[1]);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

}  // namespace

double iou(const BoxXYXY& a, const BoxXYXY& b) {
  const double inter = intersection(a, b);
  const double uni = box_area(a) + box_area(b) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double giou(const BoxXYXY& a, const BoxXYXY& b) {
  const double inter = intersection(a, b);
  const double uni = box_area(a) + box_area(b) - inter;
  const double hull = (std::max(a[2], b[2]) - std::min(a[0], b[0])) * (std::max(a[3], b[3]) - std::min(a[1], b[1]));
  if (uni <= 0 || hull <= 0) return 0.0;
  return inter / uni - (hull - uni) / hull;
}

BoxCxCyWH to_cxcywh(const BoxXYXY& b, double width, double height) {
  return {(b[0] + b[2]) / (2 * width), (b[1] + b[3]) / (2 * height), (b[2] - b[0]) / width, (b[3] - b[1]) / height};
}

BoxXYXY to_xyxy(const BoxCxCyWH& b, double width, double height) {
  return {(b[0] - b[2] / 2) * width, (b[1] - b[3] / 2) * height, (b[0] + b[2] / 2) * width,
          (b[1] + b[3] / 2) * height};
}

bool clip_box(BoxXYXY& b, double width, double height) {
  const BoxXYXY before = b;
  b[0] = std::clamp(b[0], 0.0, width);
  b[2] = std::clamp(b[2], 0.0, width);
  b[1] = std::clamp(b[1], 0.0, height);
  b[3] = std::clamp(b[3], 0.0, height);
  return b != before;
}

}  // namespace ovdlab
