#include "ovdlab/synthetic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "ovdlab/boxes.hpp"
#include "ovdlab/dataset_forge.hpp"
#include "ovdlab/errors.hpp"
#include "ovdlab/nn.hpp"
#include "ovdlab/text.hpp"

namespace ovdlab {

namespace {

constexpr const char* kSyllables[] = {"ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "fa", "fe",
                                      "fi", "fo", "fu", "ga", "ge", "gi", "go", "gu", "ka", "ke", "ki", "ko",
                                      "ku", "la", "le", "li", "lo", "lu", "ma", "me", "mi", "mo", "mu", "na",
                                      "ne", "ni", "no", "nu", "pa", "pe", "pi", "po", "pu", "ra", "re", "ri",
                                      "ro", "ru", "sa", "se", "si", "so", "su", "ta", "te", "ti", "to", "tu",
                                      "va", "ve", "vi", "vo", "vu", "za", "ze", "zi", "zo", "zu"};
constexpr int kSyllableCount = 70;
constexpr const char* kCodas[] = {"x", "k", "v", "z", "p"};

struct NamedColor {
  const char* name;
  double r, g, b;
};

constexpr NamedColor kPalette[] = {
    {"red", 0.90, 0.12, 0.10},    {"blue", 0.12, 0.25, 0.92},   {"yellow", 0.95, 0.88, 0.10},
    {"green", 0.10, 0.75, 0.20},  {"purple", 0.55, 0.15, 0.80}, {"orange", 0.98, 0.55, 0.05},
    {"cyan", 0.10, 0.85, 0.90},   {"pink", 0.98, 0.50, 0.75},   {"white", 0.95, 0.95, 0.95},
    {"brown", 0.50, 0.30, 0.10},  {"olive", 0.50, 0.55, 0.10},  {"teal", 0.05, 0.50, 0.50},
};
constexpr int kPaletteSize = 12;

}  // namespace

std::string synth_uri(std::uint64_t seed, int num_classes) {
  return "synth:" + std::to_string(seed) + ":" + std::to_string(num_classes);
}

std::optional<std::pair<std::uint64_t, int>> parse_synth_uri(const std::string& uri) {
  if (uri.rfind("synth:", 0) != 0) return std::nullopt;
  const auto colon = uri.find(':', 6);
  if (colon == std::string::npos) return std::nullopt;
  std::uint64_t seed = 0;
  int classes = 0;
  const char* a = uri.data() + 6;
  const char* b = uri.data() + colon;
  if (auto [p, ec] = std::from_chars(a, b, seed); ec != std::errc() || p != b) return std::nullopt;
  const char* c = uri.data() + colon + 1;
  const char* d = uri.data() + uri.size();
  if (auto [p, ec] = std::from_chars(c, d, classes); ec != std::errc() || p != d) return std::nullopt;
  if (classes < 1) return std::nullopt;
  return std::make_pair(seed, classes);
}

std::string synth_class_name(int class_id) {
  if (class_id < 0 || class_id >= kSyllableCount * kSyllableCount) {
    throw ArgumentError("synth_class_name: class id out of range");
  }
  // The first syllable encodes id % 70, the second id / 70 mixed with the
  // first, so names are unique and neighbouring ids look unrelated.
  const int a = (class_id * 37 + 11) % kSyllableCount;
  const int hi = class_id / kSyllableCount;
  const int b = (hi * 29 + a * 17) % kSyllableCount;
  return std::string(kSyllables[a]) + kSyllables[b] + kCodas[(a + hi) % 5];
}

std::vector<std::string> synth_vocabulary(int num_classes) {
  std::vector<std::string> out;
  for (int i = 0; i < num_classes; ++i) out.push_back(synth_class_name(i));
  return out;
}

std::array<double, 3> class_color(int class_id) {
  const auto& c = kPalette[class_id % kPaletteSize];
  // Classes beyond the palette reuse a hue at a different brightness.
  const double shade = 1.0 - 0.35 * static_cast<double>((class_id / kPaletteSize) % 3) / 2.0;
  return {c.r * shade, c.g * shade, c.b * shade};
}

std::string class_color_word(int class_id) {
  const int tier = (class_id / kPaletteSize) % 3;
  std::string base = kPalette[class_id % kPaletteSize].name;
  if (tier == 1) return "muted " + base;
  if (tier == 2) return "dark " + base;
  return base;
}

Scene generate_scene(std::uint64_t seed, int num_classes) {
  if (num_classes < 1) throw ArgumentError("generate_scene: need at least one class");
  Scene s;
  s.seed = seed;
  s.num_classes = num_classes;
  Rng rng(fnv1a64(synth_uri(seed, num_classes)));
  const int want = std::min(num_classes, rng.uniform_int(2, 3));
  std::vector<int> classes;
  while (static_cast<int>(classes.size()) < want) {
    const int c = rng.uniform_int(0, num_classes - 1);
    if (std::find(classes.begin(), classes.end(), c) == classes.end()) classes.push_back(c);
  }
  for (int c : classes) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const int w = 8 * rng.uniform_int(2, 4);
      const int h = 8 * rng.uniform_int(2, 4);
      const int x = 8 * rng.uniform_int(0, (s.width - w) / 8);
      const int y = 8 * rng.uniform_int(0, (s.height - h) / 8);
      const BoxXYXY box{double(x), double(y), double(x + w), double(y + h)};
      bool clear = true;
      for (const auto& o : s.objects) clear = clear && iou(o.box, box) == 0.0;
      if (clear) {
        s.objects.push_back({c, box});
        break;
      }
    }
  }
  return s;
}

Image render_scene(const Scene& s) {
  Image img{s.width, s.height, Matrix(s.width * s.height, 3)};
  Rng rng(fnv1a64("pixels:" + synth_uri(s.seed, s.num_classes)));
  for (int i = 0; i < s.width * s.height; ++i) {
    const double v = 0.12 + 0.04 * rng.uniform();
    for (int k = 0; k < 3; ++k) img.pixels(i, k) = v;
  }
  for (const auto& o : s.objects) {
    const auto col = class_color(o.class_id);
    for (int y = static_cast<int>(o.box[1]); y < static_cast<int>(o.box[3]); ++y)
      for (int x = static_cast<int>(o.box[0]); x < static_cast<int>(o.box[2]); ++x)
        for (int k = 0; k < 3; ++k) img.pixels(y * s.width + x, k) = col[k];
  }
  return img;
}

Image load_image(const ImageRef& ref) {
  const auto parsed = parse_synth_uri(ref.uri);
  if (!parsed) throw ArgumentError("load_image: only synth:<seed>:<classes> uris can be decoded, got " + ref.uri);
  auto scene = generate_scene(parsed->first, parsed->second);
  if (ref.width != scene.width || ref.height != scene.height) {
    throw ArgumentError("load_image: " + ref.id + " declares a size that does not match its synthetic scene");
  }
  return render_scene(scene);
}

namespace {

std::string size_word(const BoxXYXY& b) {
  const double area = box_area(b);
  if (area <= 16.0 * 24.0) return "small";
  if (area <= 24.0 * 32.0) return "medium";
  return "large";
}

std::string place_word(const BoxXYXY& b, int width, int height) {
  const double cx = (b[0] + b[2]) / 2 / width;
  const double cy = (b[1] + b[3]) / 2 / height;
  const char* row = cy < 0.38 ? "top" : (cy > 0.62 ? "bottom" : "");
  const char* col = cx < 0.38 ? "left" : (cx > 0.62 ? "right" : "");
  std::string r = row;
  std::string c = col;
  if (r.empty() && c.empty()) return "center";
  if (r.empty()) return c;
  if (c.empty()) return r;
  return r + " " + c;
}

}  // namespace

std::string describe_scene(const Scene& s) {
  std::string out;
  for (const auto& o : s.objects) {
    if (!out.empty()) out += ' ';
    out += "A " + size_word(o.box) + " " + class_color_word(o.class_id) + " " + synth_class_name(o.class_id) +
           " sits at the " + place_word(o.box, s.width, s.height) + ".";
  }
  out += " The background is dark.";
  return out;
}

Quadruple scene_quadruple(std::uint64_t seed, int num_classes) {
  const auto s = generate_scene(seed, num_classes);
  Quadruple q;
  q.image = {"synth_" + std::to_string(seed), s.width, s.height, synth_uri(seed, num_classes)};
  const auto gt = class_names_to_grounding_text(synth_vocabulary(num_classes));
  q.grounding_text = gt.text;
  for (const auto& o : s.objects) q.boxes.push_back({o.box, gt.spans[o.class_id], synth_class_name(o.class_id)});
  q.caption = describe_scene(s);
  q.source = Source::detection;
  return q;
}

Quadruple scene_caption_pair(std::uint64_t seed, int num_classes) {
  auto q = scene_quadruple(seed, num_classes);
  q.grounding_text.clear();
  q.boxes.clear();
  q.source = Source::image_text;
  return q;
}

GroundingReply SyntheticGroundingClient::detect(const GroundingRequest& req) {
  ++calls_;
  const auto parsed = parse_synth_uri(req.image_uri);
  if (!parsed) throw ServiceError("synthetic grounding: not a synthetic uri: " + req.image_uri, false);
  const auto scene = generate_scene(parsed->first, parsed->second);
  GroundingReply r;
  for (std::size_t p = 0; p < req.phrases.size(); ++p) {
    const auto words = text::split_whitespace(text::normalize_phrase(req.phrases[p]));
    for (const auto& o : scene.objects) {
      const auto name = synth_class_name(o.class_id);
      if (std::find(words.begin(), words.end(), name) != words.end()) {
        r.boxes.push_back({o.box, static_cast<int>(p), score_});
      }
    }
  }
  return r;
}

std::string SyntheticCaptioner::complete(const TextRequest& req) {
  const auto parsed = parse_synth_uri(req.image_uri);
  if (!parsed) throw ServiceError("synthetic captioner: not a synthetic uri: " + req.image_uri, false);
  return describe_scene(generate_scene(parsed->first, parsed->second));
}

}  // namespace ovdlab
