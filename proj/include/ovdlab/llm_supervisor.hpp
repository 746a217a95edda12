#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ovdlab/autograd.hpp"
#include "ovdlab/nn.hpp"
#include "ovdlab/ovd_core.hpp"

// Caption supervision head: projector from detector features into a small
// byte-level decoder-only language model with gated cross-attention.
namespace ovdlab {

constexpr int kVocabSize = 260;
constexpr int kTokBos = 256;
constexpr int kTokEos = 257;
constexpr int kTokSep = 258;
constexpr int kTokVis = 259;

inline constexpr std::string_view kSystemMessage = "You are a helpful assistant.";
inline constexpr std::string_view kImagePrompt = "Describe the image in detail.";
inline constexpr std::string_view kRegionPrompt = "Describe the region in a phrase.";

enum class VisualKind { image_level, region_level };
enum class Routing { ca_off, ca_on };

std::string_view visual_kind_name(VisualKind k);
std::string_view prompt_for(VisualKind k);

// Caps bound the assistant segment (answer bytes plus EOS).
struct GenerationCaps {
  int image_tokens = 256;
  int region_tokens = 40;
  int max_regions = 16;
  static GenerationCaps desk() { return {256, 40, 16}; }
  static GenerationCaps full() { return {1600, 40, 16}; }
};

// Side lengths of the resized p4 and p5 grids for image-level tokens.
struct TokenGrid {
  int a = 6;
  int b = 4;
  static TokenGrid desk() { return {6, 4}; }
  static TokenGrid full() { return {27, 20}; }
};

struct VisualTokenSeq {
  ag::Var tokens;  // (T, D)
  VisualKind kind = VisualKind::image_level;
  std::optional<FeaturePyramid> source_maps;  // set for region_level
  int size() const { return tokens.rows(); }
};

struct Conversation {
  std::vector<int> token_ids;
  std::vector<bool> loss_mask;
  std::vector<int> visual_slots;
  VisualKind prompt_kind = VisualKind::image_level;
  bool truncated = false;
  int size() const { return static_cast<int>(token_ids.size()); }
};

struct LmLoss {
  ag::Var loss;
  int masked_tokens = 0;
  bool empty_mask = false;  // loss is 0 by convention
};

struct CaptionLossParts {
  ag::Var image;
  ag::Var region;
};

struct LlmConfig {
  int dim = 64;
  int heads = 4;
  int blocks = 2;
  int mlp_ratio = 4;
  int detector_channels = 32;
  bool cross_attention = true;  // false builds the model without CA sublayers

  std::string fingerprint() const;
};

struct RegionPair {
  ag::Var embedding;  // (1, C) query embedding
  std::string phrase;
  int query = 0;
  int gt = 0;
};

// Byte tokenization of the fixed layout
//   BOS system SEP VIS*T prompt SEP answer EOS
// with the answer head-truncated so answer+EOS fits the cap for its kind.
Conversation build_conversation(VisualKind kind, const VisualTokenSeq& visual, std::string_view answer,
                                const GenerationCaps& caps);
std::string decode_bytes(const std::vector<int>& ids);

// At most cap matched queries in ascending gt order, paired with their gt phrase.
std::vector<RegionPair> select_positive_queries(const MatchResult& match, const QuerySet& qs,
                                                const std::vector<std::string>& gt_phrases, int cap);

class CaptionModel {
 public:
  explicit CaptionModel(const LlmConfig& cfg = {}, std::uint64_t seed = 0);
  CaptionModel(const CaptionModel&) = delete;
  CaptionModel& operator=(const CaptionModel&) = delete;

  const LlmConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  VisualTokenSeq project_image_tokens(const FeaturePyramid& fp, const TokenGrid& grid) const;
  VisualTokenSeq project_region_token(const ag::Var& query_embedding, const FeaturePyramid& fp) const;

  // (n, vocab) next-token logits for every position of the conversation.
  ag::Var logits(const Conversation& conv, const VisualTokenSeq& visual, Routing routing) const;
  LmLoss lm_loss(const Conversation& conv, const VisualTokenSeq& visual, Routing routing) const;

  ag::Var region_caption_loss(const std::vector<RegionPair>& pairs, const FeaturePyramid& fp,
                              const GenerationCaps& caps, Routing routing) const;

  // Greedy decoding until EOS (or any special token) or max_new_tokens.
  std::string generate_caption(const VisualTokenSeq& visual, VisualKind kind, int max_new_tokens) const;

 private:
  ag::Var forward(const std::vector<int>& ids, int visual_start, const VisualTokenSeq& visual, Routing routing) const;

  LlmConfig cfg_;
  ParamStore store_;
  Linear proj1_, proj2_;
  ag::Var tok_emb_;
  struct Block {
    LayerNorm ln1, ln_ca, ln2;
    MultiHeadAttention self_attn, cross_attn;
    Linear fc1, fc2;
  };
  std::vector<Block> blocks_;
  LayerNorm final_ln_;
};

}  // namespace ovdlab
