#pragma once

#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ovdlab/config.hpp"
#include "ovdlab/quad_schema.hpp"
#include "ovdlab/services.hpp"

namespace ovdlab {

// ---- grounding text ----

struct GroundingText {
  std::string text;
  std::vector<PhraseSpan> spans;
};

// "chair. fork. cup. cow." style. Names must be non-empty and free of ". ".
GroundingText class_names_to_grounding_text(const std::vector<std::string>& names);

// ---- merging ----

struct MergeGroup {
  std::vector<int> member_indices;
  std::string merged_text;
  std::vector<int> offset_of_member;
};

// Two boxes conflict when they overlap at IoU >= threshold yet name
// different things (after lowercase/whitespace normalisation).
bool boxes_conflict(const GroundedBox& a, const GroundedBox& b, double iou_threshold);

// Greedy first-fit grouping in input order.
std::vector<MergeGroup> plan_merge_groups(const std::vector<Quadruple>& samples, double iou_threshold);
std::vector<Quadruple> merge_image_samples(const std::vector<Quadruple>& samples, double iou_threshold = 0.9);

// ---- caption cleaning ----

enum class CleanVerdict { kept, rejected_repetition, rejected_refusal, flag_too_short };
std::string_view verdict_name(CleanVerdict v);

struct CleanOptions {
  std::set<std::string> speculative_lexicon;  // lowercase words
  int min_tokens = 100;
  std::vector<std::string> refusal_prefixes{"sorry"};
  std::vector<std::string> refusal_substrings{"i can not", "i cannot"};
  int repeat_ngram = 3;
  double repeat_coverage = 0.5;
  static CleanOptions defaults();
};

const std::set<std::string>& default_speculative_lexicon();

struct CleanResult {
  std::string caption;
  std::vector<std::string> removed_clauses;
  CleanVerdict verdict = CleanVerdict::kept;
};

CleanResult clean_caption(std::string_view caption, const CleanOptions& opts);
CleanResult clean_caption(std::string_view caption, const std::set<std::string>& speculative_lexicon,
                          int min_tokens = 100);

// Share of punctuation-stripped tokens covered by n-grams that occur twice or more.
double repeated_ngram_coverage(std::string_view caption, int n);

// ---- pseudo boxes ----

struct PseudoBoxOptions {
  double score_threshold = 0.3;
  int min_boxes = 3;
  int max_attempts = 3;
};

struct PseudoBoxResult {
  bool discarded = false;
  std::string grounding_text;
  std::vector<GroundedBox> boxes;
  std::vector<std::string> warnings;
};

PseudoBoxResult acquire_pseudo_boxes(const ImageRef& image, const std::vector<std::string>& phrases,
                                     GroundingClient& client, const PseudoBoxOptions& opts = {});

// ---- judging ----

struct QualityScores {
  int detailedness = 0;
  int hallucination = 0;
  bool operator==(const QualityScores&) const = default;
};

const std::string& hallucination_prompt_template();
const std::string& detailedness_prompt_template();
// Substitutes {caption}; {image} stays as the marker for the judge's image slot.
std::string render_judge_prompt(const std::string& tmpl, std::string_view caption);
// A trimmed reply must be a single integer in [0,5]; anything else throws JudgeProtocolError.
int parse_judge_score(const std::string& reply);
// Asks for detailedness first, then hallucination.
QualityScores judge_caption_quality(const ImageRef& image, std::string_view caption, TextClient& judge,
                                    int max_attempts = 3);

// ---- corpus build ----

struct ForgeConfig {
  double iou_conflict_threshold = 0.9;
  CleanOptions clean = CleanOptions::defaults();
  bool regenerate = false;
  std::string caption_prompt = "Describe the image in detail.";
  PseudoBoxOptions pseudo;
  int max_attempts = 3;
};

ForgeConfig forge_config_from(const KeyValueConfig& kv);

struct BuildReport {
  long input_records = 0;
  long merge_groups = 0;
  long rejected_repetition = 0;
  long rejected_refusal = 0;
  long rejected_empty = 0;
  long flagged_too_short = 0;
  long regenerated = 0;
  long discarded_pseudo = 0;
  long removed_clauses = 0;
  std::vector<std::string> warnings;
};

struct ForgeServices {
  GroundingClient* grounding = nullptr;  // needed only for records without boxes
  TextClient* captioner = nullptr;       // needed only when regenerate is on
};

DatasetManifest build_manifest(const std::vector<std::string>& sources, const ForgeConfig& cfg,
                               ForgeServices services = {}, BuildReport* report = nullptr);

std::string emit_build_report(const BuildReport& r);

}  // namespace ovdlab
