#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ovdlab/matrix.hpp"
#include "ovdlab/quad_schema.hpp"
#include "ovdlab/services.hpp"

// Procedural desk-scale scenes: a dark canvas with two or three solid
// rectangles snapped to an 8-px grid. Each class has a fixed color and a
// made-up name, so a scene is fully described by (seed, class count).
namespace ovdlab {

// Pixels in [0,1], stored as (height*width, 3) rows in (y, x) order.
struct Image {
  int width = 0;
  int height = 0;
  Matrix pixels;
};

struct SceneObject {
  int class_id = 0;
  BoxXYXY box{};
};

struct Scene {
  std::uint64_t seed = 0;
  int num_classes = 0;
  int width = 64;
  int height = 64;
  std::vector<SceneObject> objects;
};

constexpr int kSceneSize = 64;

std::string synth_uri(std::uint64_t seed, int num_classes);
// (seed, num_classes) for "synth:<seed>:<classes>", nullopt otherwise.
std::optional<std::pair<std::uint64_t, int>> parse_synth_uri(const std::string& uri);

std::string synth_class_name(int class_id);
std::vector<std::string> synth_vocabulary(int num_classes);
std::array<double, 3> class_color(int class_id);
std::string class_color_word(int class_id);

Scene generate_scene(std::uint64_t seed, int num_classes);
Image render_scene(const Scene& s);
// Loads a synthetic image from its uri. Other uris are not decodable here.
Image load_image(const ImageRef& ref);
std::string describe_scene(const Scene& s);

// detection source: grounding text lists the whole class vocabulary.
Quadruple scene_quadruple(std::uint64_t seed, int num_classes);
// image_text source: caption only, boxes left for the pseudo-box stage.
Quadruple scene_caption_pair(std::uint64_t seed, int num_classes);

// In-process stand-ins for the external services: they read the scene back
// from its uri, so a synthetic corpus can go through the full forge pipeline.
class SyntheticGroundingClient : public GroundingClient {
 public:
  explicit SyntheticGroundingClient(double score = 0.9) : score_(score) {}
  GroundingReply detect(const GroundingRequest& req) override;
  int calls() const { return calls_; }

 private:
  double score_;
  int calls_ = 0;
};

class SyntheticCaptioner : public TextClient {
 public:
  std::string complete(const TextRequest& req) override;
};

}  // namespace ovdlab
