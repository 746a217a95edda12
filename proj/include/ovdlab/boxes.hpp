#pragma once

#include <array>

#include "ovdlab/quad_schema.hpp"

namespace ovdlab {

using BoxCxCyWH = std::array<double, 4>;  // normalized to [0,1]

double box_area(const BoxXYXY& b);
double iou(const BoxXYXY& a, const BoxXYXY& b);
// Generalized IoU: IoU minus the fraction of the enclosing box not covered by the union.
double giou(const BoxXYXY& a, const BoxXYXY& b);

BoxCxCyWH to_cxcywh(const BoxXYXY& b, double width, double height);
BoxXYXY to_xyxy(const BoxCxCyWH& b, double width, double height);

// Clamps to [0,width]x[0,height]. Returns true when anything moved.
bool clip_box(BoxXYXY& b, double width, double height);

}  // namespace ovdlab
