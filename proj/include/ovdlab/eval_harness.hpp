#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ovdlab/ovd_core.hpp"
#include "ovdlab/quad_schema.hpp"

// Zero-shot evaluation on detector state alone: chunked large-vocabulary AP,
// referring-expression localization and suite aggregation.
namespace ovdlab {

struct VocabularyChunking {
  std::vector<std::vector<std::string>> chunks;
  int chunk_size = 0;
};

// Order-preserving partition; all chunks but the last hold chunk_size names.
VocabularyChunking chunk_vocabulary(const std::vector<std::string>& classes, int chunk_size);

// 0.50, 0.55, ..., 0.95.
const std::vector<double>& default_iou_thresholds();

struct ApDetection {
  BoxXYXY bbox{};
  double score = 0.0;
  int image = 0;
};

struct ApGroundTruth {
  BoxXYXY bbox{};
  int image = 0;
};

// Greedy score-descending matching per threshold (each detection takes the
// unmatched same-image ground truth of highest IoU, lowest index on ties),
// 101-point interpolated precision, averaged over thresholds. Equal scores
// keep input order. Returns -1 when there is no ground truth.
double compute_ap(const std::vector<ApDetection>& dets, const std::vector<ApGroundTruth>& gts,
                  const std::vector<double>& iou_thresholds = default_iou_thresholds());

struct EvalOptions {
  int max_dets_per_class = 10000;  // dataset-wide cap per class
  std::vector<double> iou_thresholds = default_iou_thresholds();
};

struct EvalReport {
  std::map<std::string, double> per_class_ap;  // classes with at least one ground truth
  std::map<std::string, int> gt_counts;
  std::map<std::string, std::optional<double>> groups;  // empty group -> nullopt
  double overall_ap = 0.0;
};

// Frequency groups (e.g. rare/common/frequent) -> member classes.
using FrequencyGroups = std::map<std::string, std::vector<std::string>>;

// Runs the detector once per chunk per image, pools every (query, class)
// score across chunks and images, caps each class dataset-wide and reports
// per-class AP and group means. Ground truth is matched by box phrase.
EvalReport evaluate_chunked(const Detector& det, const std::vector<Quadruple>& dataset,
                            const VocabularyChunking& chunking, const FrequencyGroups& groups,
                            const EvalOptions& opts = {});

std::string report_to_json(const EvalReport& r);
EvalReport report_from_json(const std::string& text);

// Groups file: one "group: class, class, ..." line per group; '#' comments.
FrequencyGroups parse_groups(const std::string& text);

struct RecResult {
  std::string expression;
  std::string subject;  // empty when no noun phrase was found
  BoxXYXY box{};
  double score = 0.0;
  bool found = false;  // false is the explicit no-answer result
};

// Head of the first noun phrase, or "" when the expression has none.
std::string rec_subject(const std::string& expression);

// Selection step on precomputed scores: phrase_spans are the noun-phrase
// spans of the expression, logits is (queries x spans), boxes are pixels.
// Among queries whose best span covers the subject head, the highest scorer.
RecResult rec_select(const std::string& expression, const std::vector<PhraseSpan>& phrase_spans,
                     const Matrix& logits, const std::vector<BoxXYXY>& boxes);

RecResult rec_localize(const Detector& det, const Image& image, const std::string& expression);

// Unweighted mean of overall AP over the selected datasets (all when empty).
double aggregate_suite(const std::map<std::string, EvalReport>& reports,
                       const std::vector<std::string>& subset = {});

// Rebuilds a detector from a checkpoint's "detector" section alone; the
// configuration comes from the stored fingerprint, other sections are ignored.
DetectorConfig detector_config_from_fingerprint(const std::string& fingerprint);
std::unique_ptr<Detector> load_detector(const std::string& checkpoint_path);

}  // namespace ovdlab
