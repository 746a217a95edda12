#include "ovdlab/llm_supervisor.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "ovdlab/errors.hpp"

namespace ovdlab {

std::string_view visual_kind_name(VisualKind k) { return k == VisualKind::image_level ? "image" : "region"; }

std::string_view prompt_for(VisualKind k) { return k == VisualKind::image_level ? kImagePrompt : kRegionPrompt; }

std::string LlmConfig::fingerprint() const {
  std::ostringstream os;
  os << "llm/d" << dim << "/h" << heads << "/b" << blocks << "/m" << mlp_ratio << "/c" << detector_channels << "/ca"
     << (cross_attention ? 1 : 0);
  return os.str();
}

namespace {

void append_bytes(std::vector<int>& ids, std::string_view s) {
  for (unsigned char ch : s) ids.push_back(ch);
}

// Everything up to and including the SEP that opens the answer.
std::vector<int> prefix_ids(VisualKind kind, int visual_tokens, int& visual_start) {
  std::vector<int> ids;
  ids.push_back(kTokBos);
  append_bytes(ids, kSystemMessage);
  ids.push_back(kTokSep);
  visual_start = static_cast<int>(ids.size());
  ids.insert(ids.end(), visual_tokens, kTokVis);
  append_bytes(ids, prompt_for(kind));
  ids.push_back(kTokSep);
  return ids;
}

Matrix sinusoid(int n, int d) {
  Matrix m(n, d);
  for (int p = 0; p < n; ++p)
    for (int i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / d);
      m(p, i) = std::sin(p * freq);
      if (i + 1 < d) m(p, i + 1) = std::cos(p * freq);
    }
  return m;
}

}  // namespace

Conversation build_conversation(VisualKind kind, const VisualTokenSeq& visual, std::string_view answer,
                                const GenerationCaps& caps) {
  if (visual.kind != kind) throw ArgumentError("build_conversation: visual kind does not match the prompt kind");
  const int cap = kind == VisualKind::image_level ? caps.image_tokens : caps.region_tokens;
  if (cap < 1) throw ArgumentError("build_conversation: token cap must be at least 1");
  Conversation c;
  c.prompt_kind = kind;
  int vstart = 0;
  c.token_ids = prefix_ids(kind, visual.size(), vstart);
  for (int i = 0; i < visual.size(); ++i) c.visual_slots.push_back(vstart + i);
  c.loss_mask.assign(c.token_ids.size(), false);
  std::string_view kept = answer;
  if (static_cast<int>(kept.size()) + 1 > cap) {
    kept = kept.substr(0, cap - 1);
    c.truncated = true;
  }
  append_bytes(c.token_ids, kept);
  c.token_ids.push_back(kTokEos);
  c.loss_mask.resize(c.token_ids.size(), true);
  return c;
}

std::string decode_bytes(const std::vector<int>& ids) {
  std::string out;
  for (int id : ids)
    if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
  return out;
}

std::vector<RegionPair> select_positive_queries(const MatchResult& match, const QuerySet& qs,
                                                const std::vector<std::string>& gt_phrases, int cap) {
  std::vector<std::pair<int, int>> by_gt;
  for (const auto& [q, g] : match.pairs) {
    if (q < 0 || q >= qs.size() || g < 0 || g >= static_cast<int>(gt_phrases.size()))
      throw ArgumentError("select_positive_queries: match does not fit the query set");
    by_gt.emplace_back(g, q);
  }
  std::sort(by_gt.begin(), by_gt.end());
  std::vector<RegionPair> out;
  for (const auto& [g, q] : by_gt) {
    if (static_cast<int>(out.size()) >= cap) break;
    out.push_back({ag::slice_rows(qs.embeddings, q, 1), gt_phrases[g], q, g});
  }
  return out;
}

CaptionModel::CaptionModel(const LlmConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
  const int d = cfg.dim;
  if (d <= 0 || cfg.heads <= 0 || d % cfg.heads != 0 || cfg.blocks <= 0 || cfg.mlp_ratio <= 0 ||
      cfg.detector_channels <= 0)
    throw ArgumentError("caption model: bad config " + cfg.fingerprint());
  proj1_ = Linear(store_, "projector.fc1", "projector", cfg.detector_channels, d);
  proj2_ = Linear(store_, "projector.fc2", "projector", d, d);
  // The output head shares this table, so there is no separate vocab matrix.
  tok_emb_ = store_.add_normal("llm.tok_emb", "llm", kVocabSize, d, 0.5);
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string n = "llm.block" + std::to_string(b);
    Block blk;
    blk.ln1 = LayerNorm(store_, n + ".ln1", "llm", d);
    blk.self_attn = MultiHeadAttention(store_, n + ".self", "llm", d, d, d, cfg.heads);
    if (cfg.cross_attention) {
      blk.ln_ca = LayerNorm(store_, n + ".ln_ca", "llm", d);
      blk.cross_attn =
          MultiHeadAttention(store_, n + ".cross", "llm", d, cfg.detector_channels, d, cfg.heads, /*zero_output=*/true);
    }
    blk.ln2 = LayerNorm(store_, n + ".ln2", "llm", d);
    blk.fc1 = Linear(store_, n + ".fc1", "llm", d, cfg.mlp_ratio * d);
    blk.fc2 = Linear(store_, n + ".fc2", "llm", cfg.mlp_ratio * d, d, true, 0.5);
    blocks_.push_back(std::move(blk));
  }
  final_ln_ = LayerNorm(store_, "llm.final_ln", "llm", d);
}

VisualTokenSeq CaptionModel::project_image_tokens(const FeaturePyramid& fp, const TokenGrid& grid) const {
  if (fp.p4.cols() != cfg_.detector_channels || fp.p5.cols() != cfg_.detector_channels)
    throw ArgumentError("project_image_tokens: feature channels do not match the projector");
  if (grid.a < 0 || grid.b < 0 || grid.a + grid.b == 0) throw ArgumentError("project_image_tokens: empty token grid");
  std::vector<ag::Var> parts;
  if (grid.a > 0) parts.push_back(ag::resize_bilinear(fp.p4, fp.h4, fp.w4, grid.a, grid.a));
  if (grid.b > 0) parts.push_back(ag::resize_bilinear(fp.p5, fp.h5, fp.w5, grid.b, grid.b));
  VisualTokenSeq v;
  v.kind = VisualKind::image_level;
  v.tokens = proj2_(ag::gelu(proj1_(parts.size() == 1 ? parts[0] : ag::concat_rows(parts))));
  return v;
}

VisualTokenSeq CaptionModel::project_region_token(const ag::Var& query_embedding, const FeaturePyramid& fp) const {
  if (query_embedding.rows() != 1 || query_embedding.cols() != cfg_.detector_channels)
    throw ArgumentError("project_region_token: expected one query embedding of detector width");
  VisualTokenSeq v;
  v.kind = VisualKind::region_level;
  v.tokens = proj2_(ag::gelu(proj1_(query_embedding)));
  v.source_maps = fp;
  return v;
}

ag::Var CaptionModel::forward(const std::vector<int>& ids, int visual_start, const VisualTokenSeq& visual,
                              Routing routing) const {
  if (routing == Routing::ca_on) {
    if (visual.kind != VisualKind::region_level || !visual.source_maps)
      throw ContractError("lm: cross-attention routing is only for region-level tokens with source maps");
    if (!cfg_.cross_attention) throw ContractError("lm: cross-attention requested on a model built without it");
  }
  const int n = static_cast<int>(ids.size());
  const int t = visual.size();
  if (visual.tokens.cols() != cfg_.dim) throw ArgumentError("lm: visual token width does not match the model");

  const auto emb = ag::gather_rows(tok_emb_, ids);
  std::vector<ag::Var> pieces;
  if (visual_start > 0) pieces.push_back(ag::slice_rows(emb, 0, visual_start));
  pieces.push_back(visual.tokens);
  if (visual_start + t < n) pieces.push_back(ag::slice_rows(emb, visual_start + t, n - visual_start - t));
  auto x = ag::concat_rows(pieces) + ag::Var::constant(sinusoid(n, cfg_.dim));

  ag::Var maps;
  if (routing == Routing::ca_on) {
    const ag::Var levels[2] = {visual.source_maps->p4, visual.source_maps->p5};
    maps = ag::concat_rows(levels);
  }
  for (const auto& blk : blocks_) {
    const auto h = blk.ln1(x);
    x = x + blk.self_attn(h, h, h, true);
    if (routing == Routing::ca_on) {
      for (int s = visual_start; s < visual_start + t; ++s) {
        const auto q = blk.ln_ca(ag::slice_rows(x, s, 1));
        x = ag::add_at_row(x, s, blk.cross_attn(q, maps, maps, false));
      }
    }
    x = x + blk.fc2(ag::gelu(blk.fc1(blk.ln2(x))));
  }
  return ag::matmul(final_ln_(x), ag::transpose(tok_emb_));
}

ag::Var CaptionModel::logits(const Conversation& conv, const VisualTokenSeq& visual, Routing routing) const {
  if (conv.prompt_kind != visual.kind) throw ArgumentError("lm: conversation kind does not match visual tokens");
  if (static_cast<int>(conv.visual_slots.size()) != visual.size())
    throw ArgumentError("lm: conversation has a different number of visual slots");
  if (conv.token_ids.size() != conv.loss_mask.size()) throw ArgumentError("lm: mask length differs from tokens");
  const int start = conv.visual_slots.empty() ? 0 : conv.visual_slots.front();
  return forward(conv.token_ids, start, visual, routing);
}

LmLoss CaptionModel::lm_loss(const Conversation& conv, const VisualTokenSeq& visual, Routing routing) const {
  const auto lg = logits(conv, visual, routing);
  const int n = conv.size();
  std::vector<int> targets(n, 0);
  // std::vector<bool> is not contiguous, so the row mask lives in a plain array.
  auto mask = std::make_unique<bool[]>(n);
  LmLoss out;
  for (int i = 0; i + 1 < n; ++i) {
    targets[i] = conv.token_ids[i + 1];
    mask[i] = conv.loss_mask[i + 1];
    out.masked_tokens += mask[i] ? 1 : 0;
  }
  out.empty_mask = out.masked_tokens == 0;
  out.loss = out.empty_mask ? ag::Var::scalar(0.0)
                            : ag::masked_cross_entropy(lg, targets, std::span<const bool>(mask.get(), n));
  return out;
}

ag::Var CaptionModel::region_caption_loss(const std::vector<RegionPair>& pairs, const FeaturePyramid& fp,
                                          const GenerationCaps& caps, Routing routing) const {
  if (pairs.empty()) return ag::Var::scalar(0.0);
  ag::Var total;
  for (const auto& p : pairs) {
    const auto v = project_region_token(p.embedding, fp);
    const auto conv = build_conversation(VisualKind::region_level, v, p.phrase, caps);
    const auto l = lm_loss(conv, v, routing).loss;
    total = total.defined() ? total + l : l;
  }
  return ag::scale(total, 1.0 / static_cast<double>(pairs.size()));
}

std::string CaptionModel::generate_caption(const VisualTokenSeq& visual, VisualKind kind, int max_new_tokens) const {
  if (visual.kind != kind) throw ArgumentError("generate_caption: visual kind does not match the prompt kind");
  ag::NoGradGuard guard;
  int vstart = 0;
  auto ids = prefix_ids(kind, visual.size(), vstart);
  const Routing routing =
      kind == VisualKind::region_level && cfg_.cross_attention && visual.source_maps ? Routing::ca_on : Routing::ca_off;
  std::vector<int> produced;
  for (int step = 0; step < max_new_tokens; ++step) {
    const auto lg = forward(ids, vstart, visual, routing).value();
    const auto last = lg.row(lg.rows() - 1);
    int best = 0;
    for (int v = 1; v < kVocabSize; ++v)
      if (last[v] > last[best]) best = v;
    if (best >= 256) break;
    produced.push_back(best);
    ids.push_back(best);
  }
  return decode_bytes(produced);
}

}  // namespace ovdlab
