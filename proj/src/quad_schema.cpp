#include "ovdlab/quad_schema.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "ovdlab/errors.hpp"
#include "ovdlab/text.hpp"

namespace ovdlab {

using ordered_json = nlohmann::ordered_json;

std::string_view source_name(Source s) {
  switch (s) {
    case Source::detection:
      return "detection";
    case Source::grounding:
      return "grounding";
    case Source::image_text:
      return "image_text";
  }
  return "detection";
}

std::optional<Source> parse_source(std::string_view name) {
  if (name == "detection") return Source::detection;
  if (name == "grounding") return Source::grounding;
  if (name == "image_text") return Source::image_text;
  return std::nullopt;
}

double round_coordinate(double v) { return std::round(v * 1e4) / 1e4; }

namespace {

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = 0;
    if (c < 0x80) {
      extra = 0;
    } else if ((c & 0xE0) == 0xC0 && c >= 0xC2) {
      extra = 1;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
    } else if ((c & 0xF8) == 0xF0 && c <= 0xF4) {
      extra = 3;
    } else {
      return false;
    }
    if (extra > 0 && i + extra >= s.size()) return false;
    for (int k = 1; k <= extra; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return false;
    }
    i += extra + 1;
  }
  return true;
}

void check_text(std::vector<Violation>& out, const std::string& field, const std::string& value) {
  if (!valid_utf8(value)) out.push_back({field, "utf8"});
}

}  // namespace

std::vector<Violation> validate(const Quadruple& q) {
  std::vector<Violation> out;
  if (q.image.id.empty()) out.push_back({"image.id", "non-empty"});
  if (q.image.width <= 0) out.push_back({"image.width", "positive"});
  if (q.image.height <= 0) out.push_back({"image.height", "positive"});
  check_text(out, "image.id", q.image.id);
  check_text(out, "image.uri", q.image.uri);
  check_text(out, "grounding_text", q.grounding_text);
  check_text(out, "caption", q.caption);
  if (text::trim(q.caption).empty()) out.push_back({"caption", "non-empty"});

  const int text_len = static_cast<int>(q.grounding_text.size());
  for (std::size_t i = 0; i < q.boxes.size(); ++i) {
    const auto& b = q.boxes[i];
    const std::string prefix = "boxes[" + std::to_string(i) + "]";
    const auto& [x1, y1, x2, y2] = b.bbox;
    const bool finite = std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2);
    if (!finite) {
      out.push_back({prefix + ".bbox", "finite"});
    } else {
      if (!(x1 < x2 && y1 < y2)) out.push_back({prefix + ".bbox", "ordering"});
      if (x1 < 0 || y1 < 0 || x2 > q.image.width || y2 > q.image.height) out.push_back({prefix + ".bbox", "bounds"});
    }
    const bool span_ok = 0 <= b.span.start && b.span.start < b.span.end && b.span.end <= text_len;
    if (!span_ok) {
      out.push_back({prefix + ".span", "range"});
    } else if (q.grounding_text.compare(b.span.start, b.span.end - b.span.start, b.phrase) != 0) {
      out.push_back({prefix + ".phrase", "phrase consistency"});
    }
  }
  return out;
}

std::string emit_record(const Quadruple& q) {
  const auto violations = validate(q);
  if (!violations.empty()) throw ValidationError(violations.front().field, violations.front().rule);

  ordered_json j;
  j["image"] = ordered_json::object();
  j["image"]["id"] = q.image.id;
  j["image"]["width"] = q.image.width;
  j["image"]["height"] = q.image.height;
  j["image"]["uri"] = q.image.uri;
  j["grounding_text"] = q.grounding_text;
  j["boxes"] = ordered_json::array();
  for (const auto& b : q.boxes) {
    ordered_json box;
    box["bbox"] = {round_coordinate(b.bbox[0]), round_coordinate(b.bbox[1]), round_coordinate(b.bbox[2]),
                   round_coordinate(b.bbox[3])};
    box["span"] = {b.span.start, b.span.end};
    box["phrase"] = b.phrase;
    j["boxes"].push_back(std::move(box));
  }
  j["caption"] = q.caption;
  j["source"] = std::string(source_name(q.source));
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict);
}

namespace {

const ordered_json& field(const ordered_json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw ValidationError(path, "must be an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(path.empty() ? key : path + "." + key, "missing");
  return *it;
}

void expect_keys(const ordered_json& obj, std::initializer_list<const char*> keys, const std::string& path) {
  if (!obj.is_object()) throw ValidationError(path, "must be an object");
  std::size_t i = 0;
  for (auto it = obj.begin(); it != obj.end(); ++it, ++i) {
    if (i >= keys.size() || it.key() != *(keys.begin() + i)) {
      const std::string where = path.empty() ? it.key() : path + "." + it.key();
      throw ValidationError(where, "unexpected key or key order");
    }
  }
  if (i != keys.size()) {
    const std::string missing = *(keys.begin() + i);
    throw ValidationError(path.empty() ? missing : path + "." + missing, "missing");
  }
}

std::string get_string(const ordered_json& v, const std::string& path) {
  if (!v.is_string()) throw ValidationError(path, "must be a string");
  return v.get<std::string>();
}

int get_int(const ordered_json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ValidationError(path, "must be an integer");
  return v.get<int>();
}

double get_number(const ordered_json& v, const std::string& path) {
  if (!v.is_number()) throw ValidationError(path, "must be a number");
  return v.get<double>();
}

}  // namespace

Quadruple parse_record(std::string_view line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line.begin(), line.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed record: ") + e.what(), e.byte);
  }
  expect_keys(j, {"image", "grounding_text", "boxes", "caption", "source"}, "");

  Quadruple q;
  const auto& img = j["image"];
  expect_keys(img, {"id", "width", "height", "uri"}, "image");
  q.image.id = get_string(img["id"], "image.id");
  q.image.width = get_int(img["width"], "image.width");
  q.image.height = get_int(img["height"], "image.height");
  q.image.uri = get_string(img["uri"], "image.uri");
  q.grounding_text = get_string(j["grounding_text"], "grounding_text");

  const auto& boxes = j["boxes"];
  if (!boxes.is_array()) throw ValidationError("boxes", "must be an array");
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const std::string path = "boxes[" + std::to_string(i) + "]";
    const auto& b = boxes[i];
    expect_keys(b, {"bbox", "span", "phrase"}, path);
    const auto& bb = field(b, "bbox", path);
    if (!bb.is_array() || bb.size() != 4) throw ValidationError(path + ".bbox", "must be 4 numbers");
    const auto& sp = field(b, "span", path);
    if (!sp.is_array() || sp.size() != 2) throw ValidationError(path + ".span", "must be 2 integers");
    GroundedBox g;
    for (int k = 0; k < 4; ++k) g.bbox[k] = get_number(bb[k], path + ".bbox");
    g.span = {get_int(sp[0], path + ".span"), get_int(sp[1], path + ".span")};
    g.phrase = get_string(field(b, "phrase", path), path + ".phrase");
    q.boxes.push_back(std::move(g));
  }
  q.caption = get_string(j["caption"], "caption");
  const auto src = parse_source(get_string(j["source"], "source"));
  if (!src) throw ValidationError("source", "unknown source kind");
  q.source = *src;

  const auto violations = validate(q);
  if (!violations.empty()) throw ValidationError(violations.front().field, violations.front().rule);
  return q;
}

ManifestStats compute_stats(const std::vector<Quadruple>& records) {
  ManifestStats s;
  s.count = static_cast<long>(records.size());
  double words = 0.0;
  for (const auto& r : records) {
    words += static_cast<double>(text::split_whitespace(r.caption).size());
    s.per_source_counts[std::string(source_name(r.source))] += 1;
  }
  s.mean_caption_words = records.empty() ? 0.0 : words / static_cast<double>(records.size());
  return s;
}

std::string emit_manifest_stats(const ManifestStats& stats, std::string_view records_path) {
  ordered_json j;
  j["records"] = std::string(records_path);
  j["count"] = stats.count;
  j["mean_caption_words"] = stats.mean_caption_words;
  j["per_source_counts"] = ordered_json::object();
  for (const auto& [k, v] : stats.per_source_counts) j["per_source_counts"][k] = v;
  return j.dump(2);
}

std::vector<Quadruple> read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus " + path);
  std::vector<Quadruple> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what(), e.byte_offset());
    } catch (const ValidationError& e) {
      throw ValidationError(e.field(), path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_corpus(const std::string& path, const std::vector<Quadruple>& records) {
  std::ostringstream buf;
  for (const auto& q : records) buf << emit_record(q) << '\n';
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write corpus " + path);
  out << buf.str();
}

}  // namespace ovdlab
