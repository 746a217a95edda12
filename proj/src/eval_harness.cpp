#include "ovdlab/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ovdlab/boxes.hpp"
#include "ovdlab/checkpoint.hpp"
#include "ovdlab/errors.hpp"
#include "ovdlab/noun_chunker.hpp"
#include "ovdlab/synthetic.hpp"

namespace ovdlab {

VocabularyChunking chunk_vocabulary(const std::vector<std::string>& classes, int chunk_size) {
  if (classes.empty()) throw ArgumentError("chunk_vocabulary: empty class list");
  if (chunk_size < 1) throw ArgumentError("chunk_vocabulary: chunk_size must be >= 1");
  VocabularyChunking out;
  out.chunk_size = chunk_size;
  for (std::size_t i = 0; i < classes.size(); i += chunk_size) {
    const auto end = std::min(classes.size(), i + static_cast<std::size_t>(chunk_size));
    out.chunks.emplace_back(classes.begin() + i, classes.begin() + end);
  }
  return out;
}

const std::vector<double>& default_iou_thresholds() {
  static const std::vector<double> t = [] {
    std::vector<double> v;
    for (int i = 0; i < 10; ++i) v.push_back((50 + 5 * i) / 100.0);
    return v;
  }();
  return t;
}

namespace {

double ap_at_threshold(const std::vector<const ApDetection*>& order, const std::vector<ApGroundTruth>& gts,
                       double thr) {
  std::vector<char> used(gts.size(), 0);
  std::vector<double> precision, recall;
  precision.reserve(order.size());
  recall.reserve(order.size());
  int tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const ApDetection& d = *order[k];
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].image != d.image) continue;
      const double v = iou(d.bbox, gts[g].bbox);
      if (v >= thr && (best < 0 || v > best_iou)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      used[best] = 1;
      ++tp;
    }
    precision.push_back(tp / static_cast<double>(k + 1));
    recall.push_back(tp / static_cast<double>(gts.size()));
  }
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const auto it = std::lower_bound(recall.begin(), recall.end(), r / 100.0);
    if (it != recall.end()) sum += precision[it - recall.begin()];
  }
  return sum / 101.0;
}

}  // namespace

double compute_ap(const std::vector<ApDetection>& dets, const std::vector<ApGroundTruth>& gts,
                  const std::vector<double>& iou_thresholds) {
  if (gts.empty()) return -1.0;
  if (iou_thresholds.empty()) throw ArgumentError("compute_ap: no IoU thresholds");
  for (double t : iou_thresholds)
    if (!(t > 0.0 && t <= 1.0)) throw ArgumentError("compute_ap: IoU threshold outside (0,1]");
  std::vector<const ApDetection*> order;
  order.reserve(dets.size());
  for (const auto& d : dets) order.push_back(&d);
  std::stable_sort(order.begin(), order.end(),
                   [](const ApDetection* a, const ApDetection* b) { return a->score > b->score; });
  double sum = 0.0;
  for (double t : iou_thresholds) sum += ap_at_threshold(order, gts, t);
  return sum / static_cast<double>(iou_thresholds.size());
}

EvalReport evaluate_chunked(const Detector& det, const std::vector<Quadruple>& dataset,
                            const VocabularyChunking& chunking, const FrequencyGroups& groups,
                            const EvalOptions& opts) {
  std::vector<std::string> vocab;
  std::set<std::string> seen;
  for (const auto& chunk : chunking.chunks)
    for (const auto& c : chunk) {
      if (!seen.insert(c).second) throw ArgumentError("evaluate_chunked: class listed twice: " + c);
      vocab.push_back(c);
    }
  if (vocab.empty()) throw ArgumentError("evaluate_chunked: empty vocabulary");
  std::map<std::string, std::string> group_of;
  for (const auto& [g, members] : groups)
    for (const auto& c : members) {
      const auto [it, fresh] = group_of.emplace(c, g);
      if (!fresh && it->second != g)
        throw ConfigError("evaluate_chunked: class '" + c + "' is in groups " + it->second + " and " + g);
    }

  std::map<std::string, std::vector<ApDetection>> pooled;
  std::map<std::string, std::vector<ApGroundTruth>> truth;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int image_index = static_cast<int>(i);
    for (const auto& b : dataset[i].boxes)
      if (seen.count(b.phrase)) truth[b.phrase].push_back({b.bbox, image_index});
    const Image img = load_image(dataset[i].image);
    for (const auto& chunk : chunking.chunks)
      for (const auto& d : det.score_all(img, chunk)) pooled[d.phrase].push_back({d.bbox, d.score, image_index});
  }

  EvalReport r;
  double total = 0.0;
  std::map<std::string, std::pair<double, int>> group_sums;
  for (const auto& g : groups) group_sums[g.first] = {0.0, 0};
  for (const auto& c : vocab) {
    const auto t = truth.find(c);
    if (t == truth.end()) continue;
    auto& dets = pooled[c];
    std::stable_sort(dets.begin(), dets.end(),
                     [](const ApDetection& a, const ApDetection& b) { return a.score > b.score; });
    if (static_cast<int>(dets.size()) > opts.max_dets_per_class) dets.resize(opts.max_dets_per_class);
    const double ap = compute_ap(dets, t->second, opts.iou_thresholds);
    r.per_class_ap[c] = ap;
    r.gt_counts[c] = static_cast<int>(t->second.size());
    total += ap;
    if (const auto g = group_of.find(c); g != group_of.end()) {
      group_sums[g->second].first += ap;
      group_sums[g->second].second += 1;
    }
  }
  if (r.per_class_ap.empty()) throw ArgumentError("evaluate_chunked: no ground truth for any vocabulary class");
  r.overall_ap = total / static_cast<double>(r.per_class_ap.size());
  for (const auto& [g, s] : group_sums)
    r.groups[g] = s.second > 0 ? std::optional<double>(s.first / s.second) : std::nullopt;
  return r;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["overall_ap"] = r.overall_ap;
  j["groups"] = nlohmann::ordered_json::object();
  for (const auto& [g, v] : r.groups) j["groups"][g] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json();
  j["per_class_ap"] = nlohmann::ordered_json::object();
  for (const auto& [c, v] : r.per_class_ap) j["per_class_ap"][c] = v;
  j["gt_counts"] = nlohmann::ordered_json::object();
  for (const auto& [c, v] : r.gt_counts) j["gt_counts"][c] = v;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("eval report: ") + e.what(), e.byte);
  }
  EvalReport r;
  try {
    r.overall_ap = j.at("overall_ap").get<double>();
    for (const auto& [g, v] : j.at("groups").items())
      r.groups[g] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    for (const auto& [c, v] : j.at("per_class_ap").items()) r.per_class_ap[c] = v.get<double>();
    if (j.contains("gt_counts"))
      for (const auto& [c, v] : j.at("gt_counts").items()) r.gt_counts[c] = v.get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("eval report", e.what());
  }
  return r;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

FrequencyGroups parse_groups(const std::string& text) {
  FrequencyGroups out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos)
      throw ConfigError("groups line " + std::to_string(lineno) + ": expected 'group: class, ...'");
    const std::string name = trim(line.substr(0, colon));
    if (name.empty()) throw ConfigError("groups line " + std::to_string(lineno) + ": empty group name");
    auto& members = out[name];
    std::istringstream items(line.substr(colon + 1));
    std::string item;
    while (std::getline(items, item, ','))
      if (auto c = trim(item); !c.empty()) members.push_back(std::move(c));
  }
  return out;
}

namespace {

// The chunk whose head names the subject: the first noun phrase that starts
// before any preposition, else the first noun phrase.
std::optional<NounChunk> subject_chunk(const std::string& expression) {
  const auto chunks = noun_chunks(expression);
  if (chunks.empty()) return std::nullopt;
  int prep = static_cast<int>(expression.size());
  for (const auto& w : tag_words(expression))
    if (w.pos == Pos::prep) {
      prep = w.start;
      break;
    }
  for (const auto& c : chunks)
    if (c.start < prep) return c;
  return chunks.front();
}

}  // namespace

std::string rec_subject(const std::string& expression) {
  const auto c = subject_chunk(expression);
  return c ? expression.substr(c->head_start, c->head_end - c->head_start) : std::string();
}

RecResult rec_select(const std::string& expression, const std::vector<PhraseSpan>& phrase_spans,
                     const Matrix& logits, const std::vector<BoxXYXY>& boxes) {
  RecResult r;
  r.expression = expression;
  const auto subject = subject_chunk(expression);
  if (!subject) return r;
  r.subject = expression.substr(subject->head_start, subject->head_end - subject->head_start);
  if (logits.cols() != static_cast<int>(phrase_spans.size()) || logits.rows() != static_cast<int>(boxes.size()))
    throw ArgumentError("rec_select: logits do not match spans and boxes");
  if (phrase_spans.empty()) return r;
  for (int q = 0; q < logits.rows(); ++q) {
    int arg = 0;
    for (int p = 1; p < logits.cols(); ++p)
      if (logits(q, p) > logits(q, arg)) arg = p;
    const auto& s = phrase_spans[arg];
    if (s.start > subject->head_start || s.end < subject->head_end) continue;
    const double score = 1.0 / (1.0 + std::exp(-logits(q, arg)));
    if (!r.found || score > r.score) {
      r.found = true;
      r.score = score;
      r.box = boxes[q];
    }
  }
  return r;
}

RecResult rec_localize(const Detector& det, const Image& image, const std::string& expression) {
  if (expression.empty()) throw ArgumentError("rec_localize: empty expression");
  std::vector<PhraseSpan> spans;
  for (const auto& c : noun_chunks(expression)) spans.push_back({c.start, c.end});
  if (spans.empty()) {
    RecResult r;
    r.expression = expression;
    return r;
  }
  ag::NoGradGuard guard;
  const auto qs = det.decode_queries(det.extract_features(image), det.embed_text(expression, spans));
  const auto& b = qs.boxes.value();
  std::vector<BoxXYXY> boxes;
  for (int q = 0; q < qs.size(); ++q)
    boxes.push_back(to_xyxy({b(q, 0), b(q, 1), b(q, 2), b(q, 3)}, image.width, image.height));
  return rec_select(expression, spans, qs.alignment_logits.value(), boxes);
}

double aggregate_suite(const std::map<std::string, EvalReport>& reports, const std::vector<std::string>& subset) {
  std::vector<std::string> names = subset;
  if (names.empty())
    for (const auto& kv : reports) names.push_back(kv.first);
  if (names.empty()) throw ArgumentError("aggregate_suite: no reports");
  double sum = 0.0;
  for (const auto& n : names) {
    const auto it = reports.find(n);
    if (it == reports.end()) throw ArgumentError("aggregate_suite: unknown dataset '" + n + "'");
    sum += it->second.overall_ap;
  }
  return sum / static_cast<double>(names.size());
}

DetectorConfig detector_config_from_fingerprint(const std::string& fingerprint) {
  DetectorConfig c;
  char tail = 0;
  if (std::sscanf(fingerprint.c_str(), "detector/c%d/q%d/h%d/l%d/t%d/pp%d%c", &c.channels, &c.queries, &c.heads,
                  &c.decoder_layers, &c.text_buckets, &c.patch_pool, &tail) != 6 ||
      c.fingerprint() != fingerprint)
    throw CheckpointError("not a detector fingerprint: " + fingerprint);
  return c;
}

std::unique_ptr<Detector> load_detector(const std::string& checkpoint_path) {
  const auto info = inspect_checkpoint(checkpoint_path);
  const auto it = std::find(info.sections.begin(), info.sections.end(), "detector");
  if (it == info.sections.end()) throw CheckpointError(checkpoint_path + ": no detector section");
  const std::string fp = info.fingerprints[it - info.sections.begin()];
  auto det = std::make_unique<Detector>(detector_config_from_fingerprint(fp), 0);
  load_checkpoint(checkpoint_path, {{"detector", fp, &det->params()}}, nullptr);
  return det;
}

}  // namespace ovdlab
