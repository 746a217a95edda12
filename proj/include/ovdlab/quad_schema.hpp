#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ovdlab {

struct ImageRef {
  std::string id;
  int width = 0;
  int height = 0;
  std::string uri;  // a path, or "synth:<seed>:<classes>" for generated scenes
  bool operator==(const ImageRef&) const = default;
};

// Byte offsets into the grounding text, [start, end).
struct PhraseSpan {
  int start = 0;
  int end = 0;
  bool operator==(const PhraseSpan&) const = default;
  auto operator<=>(const PhraseSpan&) const = default;
};

using BoxXYXY = std::array<double, 4>;  // absolute pixels

struct GroundedBox {
  BoxXYXY bbox{};
  PhraseSpan span;
  std::string phrase;  // must equal grounding_text[span.start, span.end)
  bool operator==(const GroundedBox&) const = default;
};

enum class Source { detection, grounding, image_text };

std::string_view source_name(Source s);
std::optional<Source> parse_source(std::string_view name);

// One training sample: image, grounding text, grounded boxes, detailed caption.
struct Quadruple {
  ImageRef image;
  std::string grounding_text;
  std::vector<GroundedBox> boxes;
  std::string caption;
  Source source = Source::detection;
  bool operator==(const Quadruple&) const = default;
};

struct Violation {
  std::string field;  // e.g. "boxes[2].bbox"
  std::string rule;   // e.g. "ordering"
  bool operator==(const Violation&) const = default;
};

// Empty iff every invariant of q holds. Never throws.
std::vector<Violation> validate(const Quadruple& q);

// Corpus line format: one compact JSON object with keys in the fixed order
// image{id,width,height,uri}, grounding_text, boxes[{bbox,span,phrase}],
// caption, source. bbox coordinates are rounded to 4 decimal places.
std::string emit_record(const Quadruple& q);
Quadruple parse_record(std::string_view line);

struct ManifestStats {
  long count = 0;
  double mean_caption_words = 0.0;
  std::map<std::string, long> per_source_counts;
  bool operator==(const ManifestStats&) const = default;
};

struct DatasetManifest {
  std::vector<Quadruple> records;
  ManifestStats stats;
};

ManifestStats compute_stats(const std::vector<Quadruple>& records);
std::string emit_manifest_stats(const ManifestStats& stats, std::string_view records_path);

// Reads a corpus file (one record per line, blank lines skipped). Errors carry
// the line number.
std::vector<Quadruple> read_corpus(const std::string& path);
void write_corpus(const std::string& path, const std::vector<Quadruple>& records);

double round_coordinate(double v);

}  // namespace ovdlab
