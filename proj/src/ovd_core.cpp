#include "ovdlab/ovd_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "ovdlab/dataset_forge.hpp"
#include "ovdlab/errors.hpp"
#include "ovdlab/text.hpp"

namespace ovdlab {

namespace {

constexpr int kPatch = 8;
const char* const kLevelNames[3] = {"p3", "p4", "p5"};

double inverse_sigmoid(double p) {
  p = std::clamp(p, 1e-4, 1.0 - 1e-4);
  return std::log(p / (1.0 - p));
}

Matrix coord_grid(int h, int w) {
  Matrix m(h * w, 2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      m(y * w + x, 0) = (x + 0.5) / w;
      m(y * w + x, 1) = (y + 0.5) / h;
    }
  return m;
}

// Concatenates each 2x2 block of an (h*w, C) map into one (4C) row.
ag::Var merge_2x2(const ag::Var& x, int h, int w) {
  const int oh = h / 2, ow = w / 2;
  std::vector<int> idx[4];
  for (int y = 0; y < oh; ++y)
    for (int xx = 0; xx < ow; ++xx) {
      idx[0].push_back((2 * y) * w + 2 * xx);
      idx[1].push_back((2 * y) * w + 2 * xx + 1);
      idx[2].push_back((2 * y + 1) * w + 2 * xx);
      idx[3].push_back((2 * y + 1) * w + 2 * xx + 1);
    }
  std::vector<ag::Var> parts;
  for (auto& v : idx) parts.push_back(ag::gather_rows(x, v));
  return ag::concat_cols(parts);
}

}  // namespace

std::string DetectorConfig::fingerprint() const {
  std::ostringstream os;
  os << "detector/c" << channels << "/q" << queries << "/h" << heads << "/l" << decoder_layers << "/t"
     << text_buckets << "/pp" << patch_pool;
  return os.str();
}

Detector::Detector(const DetectorConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
  const int c = cfg.channels;
  if (c <= 0 || cfg.queries <= 0 || cfg.heads <= 0 || c % cfg.heads != 0 || cfg.decoder_layers <= 0 ||
      cfg.text_buckets <= 0 || cfg.patch_pool <= 0 || kPatch % cfg.patch_pool != 0)
    throw ArgumentError("detector: bad config " + cfg.fingerprint());

  const int cells = kPatch / cfg.patch_pool;
  patch_embed_ = Linear(store_, "backbone.patch", "backbone", cells * cells * 3 + 2, c);
  merge4_ = Linear(store_, "backbone.merge4", "backbone", 4 * c, c);
  merge5_ = Linear(store_, "backbone.merge5", "backbone", 4 * c, c);

  pos_proj_ = Linear(store_, "encoder.pos", "encoder", 2, c);
  for (int l = 0; l < 3; ++l) {
    const std::string n = std::string("encoder.") + kLevelNames[l];
    level_embed_.push_back(store_.add_normal(n + ".level", "encoder", 1, c, 0.1));
    enc_norm_.emplace_back(store_, n + ".norm", "encoder", c);
    enc_fc1_.emplace_back(store_, n + ".fc1", "encoder", c, 2 * c);
    enc_fc2_.emplace_back(store_, n + ".fc2", "encoder", 2 * c, c, true, 0.5);
  }

  query_content_ = store_.add_normal("decoder.query", "decoder", cfg.queries, c, 0.1);
  // Reference boxes start on a grid covering the image.
  query_anchor_ = store_.add_constant("decoder.anchor", "decoder", cfg.queries, 4, 0.0);
  {
    const int g = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.queries))));
    const int rows = (cfg.queries + g - 1) / g;
    auto& a = query_anchor_.mutable_value();
    for (int i = 0; i < cfg.queries; ++i) {
      a(i, 0) = inverse_sigmoid((i % g + 0.5) / g);
      a(i, 1) = inverse_sigmoid((i / g + 0.5) / rows);
      a(i, 2) = inverse_sigmoid(1.0 / g);
      a(i, 3) = inverse_sigmoid(1.0 / rows);
    }
  }
  anchor_pos_ = Linear(store_, "decoder.anchor_pos", "decoder", 4, c);
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    const std::string n = "decoder.layer" + std::to_string(l);
    layers_.push_back({LayerNorm(store_, n + ".n1", "decoder", c), LayerNorm(store_, n + ".n2", "decoder", c),
                       LayerNorm(store_, n + ".n3", "decoder", c),
                       MultiHeadAttention(store_, n + ".self", "decoder", c, c, c, cfg.heads),
                       MultiHeadAttention(store_, n + ".cross", "decoder", c, c, c, cfg.heads),
                       Linear(store_, n + ".ff1", "decoder", c, 2 * c),
                       Linear(store_, n + ".ff2", "decoder", 2 * c, c, true, 0.5)});
  }
  out_norm_ = LayerNorm(store_, "decoder.out_norm", "decoder", c);
  box1_ = Linear(store_, "decoder.box1", "decoder", c, c);
  box2_ = Linear(store_, "decoder.box2", "decoder", c, 4, true, 0.1);
  align_proj_ = Linear(store_, "decoder.align", "decoder", c, c, false, 0.02);
  logit_scale_ = store_.add_constant("decoder.logit_scale", "decoder", 1, 1, std::log(3.0));

  text_table_ = store_.add_normal("text.table", "text", cfg.text_buckets, c, 1.0);
  text_proj_ = Linear(store_, "text.proj", "text", c, c);
}

void Detector::set_backbone_frozen(bool frozen) {
  for (const auto& p : store_.params())
    if (p.group == "backbone") p.var.node()->requires_grad = !frozen;
}

FeaturePyramid Detector::extract_features(const Image& image) const {
  if (image.width <= 0 || image.height <= 0 || image.width % 32 != 0 || image.height % 32 != 0)
    throw ArgumentError("extract_features: image dimensions must be positive multiples of 32, got " +
                        std::to_string(image.width) + "x" + std::to_string(image.height));
  if (image.pixels.rows() != image.width * image.height || image.pixels.cols() != 3)
    throw ArgumentError("extract_features: pixel buffer does not match image size");

  FeaturePyramid fp;
  fp.channels = cfg_.channels;
  fp.h3 = image.height / kPatch;
  fp.w3 = image.width / kPatch;
  fp.h4 = fp.h3 / 2, fp.w4 = fp.w3 / 2;
  fp.h5 = fp.h4 / 2, fp.w5 = fp.w4 / 2;

  const int pool = cfg_.patch_pool;
  const int cells = kPatch / pool;
  const double inv_area = 1.0 / (pool * pool);
  Matrix patches(fp.h3 * fp.w3, cells * cells * 3 + 2);
  for (int py = 0; py < fp.h3; ++py)
    for (int px = 0; px < fp.w3; ++px) {
      auto row = patches.row(py * fp.w3 + px);
      int k = 0;
      for (int cy = 0; cy < cells; ++cy)
        for (int cx = 0; cx < cells; ++cx) {
          for (int ch = 0; ch < 3; ++ch) {
            double acc = 0.0;
            for (int dy = 0; dy < pool; ++dy)
              for (int dx = 0; dx < pool; ++dx)
                acc += image.pixels((py * kPatch + cy * pool + dy) * image.width + px * kPatch + cx * pool + dx, ch);
            row[k++] = acc * inv_area - 0.5;
          }
        }
      row[k++] = (px + 0.5) / fp.w3 - 0.5;
      row[k++] = (py + 0.5) / fp.h3 - 0.5;
    }

  const auto b3 = ag::gelu(patch_embed_(ag::Var::constant(std::move(patches))));
  const auto b4 = ag::gelu(merge4_(merge_2x2(b3, fp.h3, fp.w3)));
  const auto b5 = ag::gelu(merge5_(merge_2x2(b4, fp.h4, fp.w4)));

  const ag::Var* levels[3] = {&b3, &b4, &b5};
  const int hs[3] = {fp.h3, fp.h4, fp.h5}, ws[3] = {fp.w3, fp.w4, fp.w5};
  ag::Var outs[3];
  for (int l = 0; l < 3; ++l) {
    auto x = *levels[l] + pos_proj_(ag::Var::constant(coord_grid(hs[l], ws[l])));
    x = ag::add_row(x, level_embed_[l]);
    x = x + enc_fc2_[l](ag::gelu(enc_fc1_[l](enc_norm_[l](x))));
    outs[l] = x;
  }
  fp.p3 = outs[0];
  fp.p4 = outs[1];
  fp.p5 = outs[2];
  return fp;
}

ag::Var Detector::text_features(std::string_view phrase) const {
  const std::uint64_t salt = 0x7e57ULL;
  std::vector<int> buckets;
  auto add = [&](const std::string& feat) {
    buckets.push_back(static_cast<int>(fnv1a64(feat, salt) % static_cast<std::uint64_t>(cfg_.text_buckets)));
  };
  add("b:");
  const std::string lower = text::to_lower(phrase);
  std::size_t i = 0;
  while (i < lower.size()) {
    if (!text::is_word_byte(lower[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < lower.size() && text::is_word_byte(lower[j])) ++j;
    const std::string word = lower.substr(i, j - i);
    add("w:" + word);
    const std::string padded = "<" + word + ">";
    for (std::size_t k = 0; k + 3 <= padded.size(); ++k) add("c:" + padded.substr(k, 3));
    i = j;
  }
  return ag::mean_rows(ag::gather_rows(text_table_, buckets));
}

PhraseEmbedding Detector::embed_text(const std::string& grounding_text, const std::vector<PhraseSpan>& spans) const {
  const int len = static_cast<int>(grounding_text.size());
  std::vector<ag::Var> rows;
  rows.reserve(spans.size());
  for (const auto& s : spans) {
    if (s.start < 0 || s.start >= s.end || s.end > len)
      throw ArgumentError("embed_text: span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                          ") outside text of length " + std::to_string(len));
    rows.push_back(text_features(std::string_view(grounding_text).substr(s.start, s.end - s.start)));
  }
  PhraseEmbedding pe;
  pe.spans = spans;
  if (rows.empty()) {
    pe.vectors = ag::Var::constant(Matrix(0, cfg_.channels));
    return pe;
  }
  pe.vectors = ag::l2_normalize_rows(text_proj_(ag::concat_rows(rows)));
  return pe;
}

QuerySet Detector::decode_queries(const FeaturePyramid& fp, const PhraseEmbedding& pe) const {
  if (fp.channels != cfg_.channels || fp.p3.cols() != cfg_.channels || fp.p4.cols() != cfg_.channels ||
      fp.p5.cols() != cfg_.channels)
    throw ArgumentError("decode_queries: feature channels do not match the detector");
  if (pe.vectors.defined() && pe.vectors.cols() != cfg_.channels)
    throw ArgumentError("decode_queries: phrase channels do not match the detector");

  const ag::Var levels[3] = {fp.p3, fp.p4, fp.p5};
  const auto memory = ag::concat_rows(levels);

  auto q = query_content_ + anchor_pos_(ag::sigmoid(query_anchor_));
  for (const auto& layer : layers_) {
    const auto h1 = layer.n1(q);
    q = q + layer.self_attn(h1, h1, h1, false);
    q = q + layer.cross_attn(layer.n2(q), memory, memory, false);
    q = q + layer.ff2(ag::gelu(layer.ff1(layer.n3(q))));
  }
  q = out_norm_(q);

  QuerySet qs;
  qs.embeddings = q;
  qs.boxes = ag::sigmoid(query_anchor_ + box2_(ag::gelu(box1_(q))));
  if (pe.size() == 0) {
    qs.alignment_logits = ag::Var::constant(Matrix(cfg_.queries, 0));
  } else {
    const auto proj = ag::scale_by(align_proj_(q), ag::exp(logit_scale_));
    qs.alignment_logits = ag::matmul(proj, ag::transpose(pe.vectors));
  }
  return qs;
}

std::vector<Detection> Detector::score_all(const Image& image, const std::vector<std::string>& vocabulary) const {
  if (vocabulary.empty()) throw ArgumentError("detect: empty vocabulary");
  ag::NoGradGuard guard;
  const auto gt = class_names_to_grounding_text(vocabulary);
  const auto qs = decode_queries(extract_features(image), embed_text(gt.text, gt.spans));
  const auto& logits = qs.alignment_logits.value();
  const auto& boxes = qs.boxes.value();
  std::vector<Detection> out;
  out.reserve(static_cast<std::size_t>(qs.size()) * vocabulary.size());
  for (int q = 0; q < qs.size(); ++q) {
    const BoxXYXY bb = to_xyxy({boxes(q, 0), boxes(q, 1), boxes(q, 2), boxes(q, 3)}, image.width, image.height);
    for (int p = 0; p < logits.cols(); ++p) {
      Detection d;
      d.bbox = bb;
      d.phrase = vocabulary[p];
      d.phrase_index = p;
      d.query = q;
      d.score = 1.0 / (1.0 + std::exp(-logits(q, p)));
      out.push_back(std::move(d));
    }
  }
  return out;
}

std::vector<Detection> Detector::detect(const Image& image, const std::vector<std::string>& vocabulary,
                                        double score_threshold, int max_dets) const {
  const auto all = score_all(image, vocabulary);
  std::vector<Detection> best;
  const std::size_t p = vocabulary.size();
  for (std::size_t i = 0; i < all.size(); i += p) {
    std::size_t arg = i;
    for (std::size_t k = i + 1; k < i + p; ++k)
      if (all[k].score > all[arg].score) arg = k;
    // A sigmoid never reaches 1, so a threshold of 1 admits nothing.
    if (score_threshold < 1.0 && all[arg].score >= score_threshold) best.push_back(all[arg]);
  }
  std::stable_sort(best.begin(), best.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (max_dets >= 0 && static_cast<int>(best.size()) > max_dets) best.resize(max_dets);
  return best;
}

namespace {

// Spans of a "a. b. c." class list, or nothing when the text is not one.
std::vector<PhraseSpan> class_list_spans(const std::string& t) {
  std::vector<PhraseSpan> out;
  std::size_t i = 0;
  while (i < t.size()) {
    while (i < t.size() && t[i] == ' ') ++i;
    if (i >= t.size()) break;
    const auto dot = t.find('.', i);
    if (dot == std::string::npos || dot == i) return {};
    std::size_t end = dot;
    while (end > i && t[end - 1] == ' ') --end;
    out.push_back({static_cast<int>(i), static_cast<int>(end)});
    i = dot + 1;
    if (i < t.size() && t[i] != ' ') return {};
  }
  return out;
}

}  // namespace

GroundingTargets make_targets(const Quadruple& q) {
  GroundingTargets t;
  auto listed = class_list_spans(q.grounding_text);
  bool use_list = !listed.empty();
  for (const auto& b : q.boxes)
    if (std::find(listed.begin(), listed.end(), b.span) == listed.end()) use_list = false;
  if (use_list) {
    t.phrase_spans = std::move(listed);
  } else {
    for (const auto& b : q.boxes)
      if (std::find(t.phrase_spans.begin(), t.phrase_spans.end(), b.span) == t.phrase_spans.end())
        t.phrase_spans.push_back(b.span);
    std::sort(t.phrase_spans.begin(), t.phrase_spans.end());
  }
  for (const auto& b : q.boxes) {
    TargetBox tb;
    tb.box = to_cxcywh(b.bbox, q.image.width, q.image.height);
    tb.phrase = static_cast<int>(std::find(t.phrase_spans.begin(), t.phrase_spans.end(), b.span) -
                                 t.phrase_spans.begin());
    t.boxes.push_back(tb);
  }
  return t;
}

// ---- assignment ----

namespace {

// Classic O(n^2 m) shortest augmenting path solver; requires n <= m. Returns
// the column of each row.
std::vector<int> hungarian_rows(const std::vector<std::vector<double>>& a) {
  const int n = static_cast<int>(a.size());
  if (n == 0) return {};
  const int m = static_cast<int>(a[0].size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j]) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

// Optimal assignment restricted to the given rows and columns; returns the
// column per listed row (-1 when unmatched).
std::vector<int> solve_subset(const Matrix& cost, const std::vector<int>& rows, const std::vector<int>& cols) {
  std::vector<int> out(rows.size(), -1);
  if (rows.empty() || cols.empty()) return out;
  if (rows.size() <= cols.size()) {
    std::vector<std::vector<double>> a(rows.size(), std::vector<double>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < cols.size(); ++j) a[i][j] = cost(rows[i], cols[j]);
    const auto r = hungarian_rows(a);
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = cols[r[i]];
  } else {
    std::vector<std::vector<double>> a(cols.size(), std::vector<double>(rows.size()));
    for (std::size_t j = 0; j < cols.size(); ++j)
      for (std::size_t i = 0; i < rows.size(); ++i) a[j][i] = cost(rows[i], cols[j]);
    const auto r = hungarian_rows(a);
    for (std::size_t j = 0; j < cols.size(); ++j) out[r[j]] = cols[j];
  }
  return out;
}

double total_of(const Matrix& cost, const std::vector<int>& assign) {
  double t = 0.0;
  for (std::size_t q = 0; q < assign.size(); ++q)
    if (assign[q] >= 0) t += cost(static_cast<int>(q), assign[q]);
  return t;
}

}  // namespace

MatchResult solve_assignment(const Matrix& cost) {
  const int nq = cost.rows();
  const int ng = cost.cols();
  MatchResult res;
  const int k = std::min(nq, ng);
  if (k == 0) {
    for (int q = 0; q < nq; ++q) res.unmatched_queries.push_back(q);
    return res;
  }
  for (const double v : cost.values())
    if (!std::isfinite(v)) throw ArgumentError("solve_assignment: non-finite cost");

  std::vector<int> all_rows(nq), all_cols(ng);
  std::iota(all_rows.begin(), all_rows.end(), 0);
  std::iota(all_cols.begin(), all_cols.end(), 0);
  const double best = total_of(cost, solve_subset(cost, all_rows, all_cols));
  const double tol = 1e-9 * std::max(1.0, std::abs(best));

  // Fix queries in ascending order to the smallest choice that still admits an
  // optimal completion.
  std::vector<int> assign(nq, -1);
  std::vector<char> col_used(ng, 0);
  int matched = 0;
  for (int q = 0; q < nq; ++q) {
    std::vector<int> rest_rows;
    for (int r = q + 1; r < nq; ++r) rest_rows.push_back(r);
    bool fixed = false;
    for (int g = 0; g <= ng && !fixed; ++g) {
      const bool unmatched = g == ng;
      if (!unmatched && col_used[g]) continue;
      std::vector<int> rest_cols;
      for (int c = 0; c < ng; ++c)
        if (!col_used[c] && c != g) rest_cols.push_back(c);
      const int reach = matched + (unmatched ? 0 : 1) +
                        static_cast<int>(std::min(rest_rows.size(), rest_cols.size()));
      if (reach != k) continue;
      auto trial = assign;
      trial[q] = unmatched ? -1 : g;
      const auto sub = solve_subset(cost, rest_rows, rest_cols);
      for (std::size_t i = 0; i < rest_rows.size(); ++i) trial[rest_rows[i]] = sub[i];
      if (total_of(cost, trial) <= best + tol) {
        assign[q] = trial[q];
        if (!unmatched) {
          col_used[g] = 1;
          ++matched;
        }
        fixed = true;
      }
    }
    if (!fixed) throw std::logic_error("solve_assignment: no optimal completion");
  }
  for (int q = 0; q < nq; ++q) {
    if (assign[q] >= 0)
      res.pairs.emplace_back(q, assign[q]);
    else
      res.unmatched_queries.push_back(q);
  }
  return res;
}

Matrix matching_cost(const QuerySet& qs, const std::vector<TargetBox>& gts, const CostWeights& w) {
  const int nq = qs.size();
  Matrix cost(nq, static_cast<int>(gts.size()));
  const auto& boxes = qs.boxes.value();
  const auto& logits = qs.alignment_logits.value();
  for (int q = 0; q < nq; ++q) {
    const BoxCxCyWH pb{boxes(q, 0), boxes(q, 1), boxes(q, 2), boxes(q, 3)};
    const auto pxy = to_xyxy(pb, 1.0, 1.0);
    for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
      const auto& gt = gts[g];
      if (gt.phrase < 0 || gt.phrase >= logits.cols()) throw ArgumentError("matching_cost: gt phrase out of range");
      const double prob = 1.0 / (1.0 + std::exp(-logits(q, gt.phrase)));
      double l1 = 0.0;
      for (int k = 0; k < 4; ++k) l1 += std::abs(pb[k] - gt.box[k]);
      cost(q, g) = -w.cls * prob + w.l1 * l1 + w.giou * (1.0 - giou(pxy, to_xyxy(gt.box, 1.0, 1.0)));
    }
  }
  return cost;
}

MatchResult match_hungarian(const QuerySet& qs, const std::vector<TargetBox>& gts, const CostWeights& w) {
  return solve_assignment(matching_cost(qs, gts, w));
}

// ---- losses ----

ag::Var loss_align(const QuerySet& qs, const MatchResult& match, const std::vector<TargetBox>& gts, double alpha,
                   double gamma) {
  const auto& logits = qs.alignment_logits;
  Matrix targets(logits.rows(), logits.cols(), 0.0);
  for (const auto& [q, g] : match.pairs) {
    if (q < 0 || q >= logits.rows() || g < 0 || g >= static_cast<int>(gts.size()) || gts[g].phrase < 0 ||
        gts[g].phrase >= logits.cols())
      throw ArgumentError("loss_align: match does not fit the query set");
    targets(q, gts[g].phrase) = 1.0;
  }
  if (logits.value().empty()) return ag::Var::scalar(0.0);
  const double normalizer = std::max<double>(1.0, static_cast<double>(match.pairs.size()));
  return ag::sigmoid_focal_loss(logits, targets, alpha, gamma, normalizer);
}

ag::Var giou_rows(const ag::Var& a, const ag::Var& b) {
  auto col = [](const ag::Var& m, int c) { return ag::slice_cols(m, c, 1); };
  const auto acx = col(a, 0), acy = col(a, 1), aw = col(a, 2), ah = col(a, 3);
  const auto bcx = col(b, 0), bcy = col(b, 1), bw = col(b, 2), bh = col(b, 3);
  const auto ax1 = acx - ag::scale(aw, 0.5), ax2 = acx + ag::scale(aw, 0.5);
  const auto ay1 = acy - ag::scale(ah, 0.5), ay2 = acy + ag::scale(ah, 0.5);
  const auto bx1 = bcx - ag::scale(bw, 0.5), bx2 = bcx + ag::scale(bw, 0.5);
  const auto by1 = bcy - ag::scale(bh, 0.5), by2 = bcy + ag::scale(bh, 0.5);

  const auto iw = ag::relu(ag::minimum(ax2, bx2) - ag::maximum(ax1, bx1));
  const auto ih = ag::relu(ag::minimum(ay2, by2) - ag::maximum(ay1, by1));
  const auto inter = iw * ih;
  const auto uni = aw * ah + bw * bh - inter;
  const auto hw = ag::maximum(ax2, bx2) - ag::minimum(ax1, bx1);
  const auto hh = ag::maximum(ay2, by2) - ag::minimum(ay1, by1);
  const auto hull = hw * hh;
  return inter / uni - (hull - uni) / hull;
}

ag::Var loss_box(const QuerySet& qs, const MatchResult& match, const std::vector<TargetBox>& gts, double w_l1,
                 double w_giou) {
  if (match.pairs.empty()) return ag::Var::scalar(0.0);
  std::vector<int> rows;
  Matrix target(static_cast<int>(match.pairs.size()), 4);
  for (std::size_t i = 0; i < match.pairs.size(); ++i) {
    const auto [q, g] = match.pairs[i];
    if (q < 0 || q >= qs.size() || g < 0 || g >= static_cast<int>(gts.size()))
      throw ArgumentError("loss_box: match does not fit the query set");
    rows.push_back(q);
    for (int k = 0; k < 4; ++k) target(static_cast<int>(i), k) = gts[g].box[k];
  }
  const auto pred = ag::gather_rows(qs.boxes, rows);
  const auto tgt = ag::Var::constant(std::move(target));
  const double m = static_cast<double>(rows.size());
  const auto l1 = ag::sum(ag::abs(pred - tgt));
  const auto g = ag::sum(giou_rows(pred, tgt));
  // mean_i [ w_l1 * L1_i + w_giou * (1 - giou_i) ]
  return ag::scale(ag::add_scalar(ag::scale(l1, w_l1) - ag::scale(g, w_giou), w_giou * m), 1.0 / m);
}

GroundingLossParts grounding_losses(const QuerySet& qs, const MatchResult& match, const std::vector<TargetBox>& gts,
                                    const DetectorConfig& cfg) {
  return {loss_align(qs, match, gts, cfg.focal_alpha, cfg.focal_gamma),
          loss_box(qs, match, gts, cfg.cost_l1, cfg.cost_giou)};
}

}  // namespace ovdlab
