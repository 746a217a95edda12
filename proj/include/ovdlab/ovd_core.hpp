#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ovdlab/autograd.hpp"
#include "ovdlab/boxes.hpp"
#include "ovdlab/nn.hpp"
#include "ovdlab/quad_schema.hpp"
#include "ovdlab/synthetic.hpp"

// Toy DETR-style open-vocabulary detector. Feature maps are (H*W, C) rows.
namespace ovdlab {

struct DetectorConfig {
  int channels = 32;
  int queries = 20;
  int image_size = 64;
  int heads = 4;
  int decoder_layers = 2;
  int text_buckets = 256;
  int patch_pool = 1;  // average-pool pixels inside each 8x8 patch (1, 2, 4 or 8)
  double cost_class = 2.0;
  double cost_l1 = 5.0;
  double cost_giou = 2.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  // Shapes only; two detectors with equal fingerprints can swap weights.
  std::string fingerprint() const;
};

struct FeaturePyramid {
  ag::Var p3, p4, p5;  // strides 8 / 16 / 32
  int h3 = 0, w3 = 0, h4 = 0, w4 = 0, h5 = 0, w5 = 0;
  int channels = 0;
};

struct PhraseEmbedding {
  ag::Var vectors;  // (num_phrases, C), unit rows
  std::vector<PhraseSpan> spans;
  int size() const { return static_cast<int>(spans.size()); }
};

struct QuerySet {
  ag::Var embeddings;        // (Q, C)
  ag::Var boxes;             // (Q, 4) normalized cx, cy, w, h
  ag::Var alignment_logits;  // (Q, num_phrases)
  int size() const { return embeddings.rows(); }
};

// A ground-truth box in model coordinates, tied to a phrase row.
struct TargetBox {
  BoxCxCyWH box{};
  int phrase = 0;
};

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (query, gt), ascending query
  std::vector<int> unmatched_queries;
};

struct GroundingLossParts {
  ag::Var align;
  ag::Var box;
};

struct CostWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
};

struct Detection {
  BoxXYXY bbox{};  // absolute pixels
  std::string phrase;
  int phrase_index = 0;
  int query = 0;
  double score = 0.0;
};

class Detector {
 public:
  explicit Detector(const DetectorConfig& cfg = {}, std::uint64_t seed = 0);
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  const DetectorConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // Backbone parameters stop receiving gradients; other groups are untouched.
  void set_backbone_frozen(bool frozen);

  FeaturePyramid extract_features(const Image& image) const;
  PhraseEmbedding embed_text(const std::string& grounding_text, const std::vector<PhraseSpan>& spans) const;
  QuerySet decode_queries(const FeaturePyramid& fp, const PhraseEmbedding& pe) const;

  // Detector-only inference over a class vocabulary; the best phrase per query.
  std::vector<Detection> detect(const Image& image, const std::vector<std::string>& vocabulary,
                                double score_threshold, int max_dets) const;
  // Every (query, class) pair with its sigmoid score, for pooled evaluation.
  std::vector<Detection> score_all(const Image& image, const std::vector<std::string>& vocabulary) const;

 private:
  ag::Var text_features(std::string_view phrase) const;

  DetectorConfig cfg_;
  ParamStore store_;
  // backbone
  Linear patch_embed_, merge4_, merge5_;
  // encoder
  Linear pos_proj_;
  std::vector<ag::Var> level_embed_;
  std::vector<LayerNorm> enc_norm_;
  std::vector<Linear> enc_fc1_, enc_fc2_;
  // decoder
  ag::Var query_content_, query_anchor_;
  Linear anchor_pos_;
  struct DecoderLayer {
    LayerNorm n1, n2, n3;
    MultiHeadAttention self_attn, cross_attn;
    Linear ff1, ff2;
  };
  std::vector<DecoderLayer> layers_;
  LayerNorm out_norm_;
  Linear box1_, box2_, align_proj_;
  ag::Var logit_scale_;
  // text
  ag::Var text_table_;
  Linear text_proj_;
};

// Phrase rows and normalized boxes for a record. A class-list grounding text
// ("a. b. c.") contributes every listed class as a phrase, so absent classes
// act as negatives; otherwise the distinct box spans are the phrases.
struct GroundingTargets {
  std::vector<PhraseSpan> phrase_spans;
  std::vector<TargetBox> boxes;
};
GroundingTargets make_targets(const Quadruple& q);

// Minimum-cost assignment on an explicit cost matrix (rows = queries). Among
// optimal assignments the one whose per-query gt list is lexicographically
// smallest wins (unmatched sorts after every gt).
MatchResult solve_assignment(const Matrix& cost);
Matrix matching_cost(const QuerySet& qs, const std::vector<TargetBox>& gts, const CostWeights& w = {});
MatchResult match_hungarian(const QuerySet& qs, const std::vector<TargetBox>& gts, const CostWeights& w = {});

ag::Var loss_align(const QuerySet& qs, const MatchResult& match, const std::vector<TargetBox>& gts,
                   double alpha = 0.25, double gamma = 2.0);
ag::Var loss_box(const QuerySet& qs, const MatchResult& match, const std::vector<TargetBox>& gts,
                 double w_l1 = 5.0, double w_giou = 2.0);
GroundingLossParts grounding_losses(const QuerySet& qs, const MatchResult& match, const std::vector<TargetBox>& gts,
                                    const DetectorConfig& cfg);

// Differentiable GIoU between (M,4) cxcywh rows; returns (M,1).
ag::Var giou_rows(const ag::Var& a, const ag::Var& b);

}  // namespace ovdlab
