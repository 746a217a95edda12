#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>

#include "ovdlab/boxes.hpp"
#include "ovdlab/checkpoint.hpp"
#include "ovdlab/errors.hpp"
#include "ovdlab/eval_harness.hpp"
#include "ovdlab/synthetic.hpp"
#include "support/oracles.hpp"

using namespace ovdlab;

namespace {

BoxXYXY random_box(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> c(0, 6);
  std::uniform_int_distribution<int> s(2, 6);
  const double x = c(rng), y = c(rng);
  return {x, y, x + s(rng), y + s(rng)};
}

std::vector<Quadruple> ten_class_dataset() {
  std::vector<Quadruple> d;
  for (int i = 0; i < 6; ++i) d.push_back(scene_quadruple(900 + i, 10));
  return d;
}

DetectorConfig small_detector() {
  DetectorConfig c;
  c.channels = 16;
  c.queries = 8;
  c.decoder_layers = 1;
  return c;
}

}  // namespace

TEST_CASE("chunk_vocabulary partitions in order") {
  std::vector<std::string> lvis;
  for (int i = 0; i < 1203; ++i) lvis.push_back("c" + std::to_string(i));
  const auto ch = chunk_vocabulary(lvis, 40);
  REQUIRE(ch.chunks.size() == 31);
  for (std::size_t i = 0; i + 1 < ch.chunks.size(); ++i) CHECK(ch.chunks[i].size() == 40);
  CHECK(ch.chunks.back().size() == 3);
  std::vector<std::string> flat;
  for (const auto& c : ch.chunks) flat.insert(flat.end(), c.begin(), c.end());
  CHECK(flat == lvis);

  CHECK(chunk_vocabulary(std::vector<std::string>(lvis.begin(), lvis.begin() + 80), 40).chunks.size() == 2);
  CHECK(chunk_vocabulary(std::vector<std::string>(lvis.begin(), lvis.begin() + 5), 40).chunks.size() == 1);
  CHECK_THROWS_AS(chunk_vocabulary({}, 40), ArgumentError);
  CHECK_THROWS_AS(chunk_vocabulary({"a"}, 0), ArgumentError);
}

TEST_CASE("compute_ap hand cases") {
  const BoxXYXY gt{0, 0, 10, 10};
  CHECK(compute_ap({{{0, 0, 10, 9.5}, 0.9}}, {{gt}}) == 1.0);
  const BoxXYXY sixty{0, 0, 6, 10};
  REQUIRE(iou(sixty, gt) == 0.6);
  CHECK(std::abs(compute_ap({{sixty, 0.9}}, {{gt}}) - 0.3) <= 1e-12);
  CHECK(compute_ap({{sixty, 0.9}}, {}) == -1.0);
  CHECK(compute_ap({}, {{gt}}) == 0.0);
  // A detection on another image never matches.
  CHECK(compute_ap({{gt, 0.9, 1}}, {{gt, 0}}) == 0.0);
  // One TP after one FP: precision 1/2 over all recall levels.
  CHECK(compute_ap({{{50, 50, 60, 60}, 0.9}, {gt, 0.8}}, {{gt}}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(compute_ap({}, {{gt}}, {0.0}), ArgumentError);
  CHECK_THROWS_AS(compute_ap({}, {{gt}}, {1.5}), ArgumentError);
}

TEST_CASE("compute_ap equals the exhaustive oracle on random tiny instances") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> nd(0, 4), ng(0, 3), img(0, 1), sc(1, 4);
  int nonzero = 0;
  for (int trial = 0; trial < 400; ++trial) {
    std::vector<ApDetection> dets(nd(rng));
    std::vector<ApGroundTruth> gts(ng(rng));
    for (auto& g : gts) g = {random_box(rng), img(rng)};
    for (auto& d : dets) {
      // Half the detections jitter a ground-truth box, so matches are common.
      if (!gts.empty() && (rng() & 1)) {
        const auto& g = gts[rng() % gts.size()];
        d.bbox = g.bbox;
        d.bbox[rng() % 4] += (static_cast<int>(rng() % 3) - 1) * 0.5;
        d.image = g.image;
      } else {
        d.bbox = random_box(rng);
        d.image = img(rng);
      }
      d.score = sc(rng) / 4.0;  // coarse scores force ties
    }
    const double a = compute_ap(dets, gts);
    REQUIRE(a == ovdlab::testing::ap_oracle(dets, gts, default_iou_thresholds()));
    nonzero += a > 0.0;
  }
  CHECK(nonzero > 50);
}

TEST_CASE("demoting a true positive below a false positive never raises AP") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    // Disjoint ground truths; each detection sits exactly on one or far away.
    const int n_gt = 1 + static_cast<int>(rng() % 3);
    std::vector<ApGroundTruth> gts;
    for (int g = 0; g < n_gt; ++g) gts.push_back({{20.0 * g, 0, 20.0 * g + 10, 10}});
    std::vector<ApDetection> dets;
    std::vector<char> is_tp;
    for (int g = 0; g < n_gt; ++g)
      if (rng() % 3) {
        dets.push_back({gts[g].bbox, std::uniform_real_distribution<double>(0, 1)(rng)});
        is_tp.push_back(1);
      }
    for (int k = 0; k < 3; ++k) {
      dets.push_back({{100.0 + 20 * k, 50, 110.0 + 20 * k, 60}, std::uniform_real_distribution<double>(0, 1)(rng)});
      is_tp.push_back(0);
    }
    const double before = compute_ap(dets, gts);
    for (std::size_t i = 0; i < dets.size(); ++i)
      for (std::size_t j = 0; j < dets.size(); ++j) {
        if (!is_tp[i] || is_tp[j] || dets[i].score <= dets[j].score) continue;
        auto demoted = dets;
        demoted[i].score = dets[j].score / 2.0;
        CHECK(compute_ap(demoted, gts) <= before);
      }
  }
}

TEST_CASE("chunked evaluation equals single-pass evaluation") {
  const Detector det(small_detector(), 11);
  const auto data = ten_class_dataset();
  const auto vocab = synth_vocabulary(10);
  const FrequencyGroups groups{{"rare", {vocab[0], vocab[1], vocab[2]}},
                               {"common", {vocab[3], vocab[4], vocab[5], vocab[6]}},
                               {"frequent", {vocab[7], vocab[8], vocab[9]}}};
  const auto chunked = evaluate_chunked(det, data, chunk_vocabulary(vocab, 2), groups);
  const auto full = evaluate_chunked(det, data, chunk_vocabulary(vocab, 10), groups);
  REQUIRE(chunked.per_class_ap.size() == full.per_class_ap.size());
  CHECK(std::abs(chunked.overall_ap - full.overall_ap) <= 1e-9);
  for (const auto& [c, ap] : full.per_class_ap) CHECK(std::abs(chunked.per_class_ap.at(c) - ap) <= 1e-9);
  for (const auto& [g, v] : full.groups) {
    REQUIRE(v.has_value() == chunked.groups.at(g).has_value());
    if (v) CHECK(std::abs(*chunked.groups.at(g) - *v) <= 1e-9);
  }

  // overall is the mean over classes that have ground truth.
  double sum = 0.0;
  for (const auto& [c, ap] : full.per_class_ap) {
    CHECK(ap >= 0.0);
    CHECK(ap <= 1.0);
    CHECK(full.gt_counts.at(c) > 0);
    sum += ap;
  }
  CHECK(full.overall_ap == doctest::Approx(sum / full.per_class_ap.size()).epsilon(1e-15));
}

TEST_CASE("classes without ground truth are excluded and groups are validated") {
  const Detector det(small_detector(), 11);
  auto data = ten_class_dataset();
  std::vector<std::string> vocab = synth_vocabulary(10);
  vocab.push_back("unicorn");
  const auto r = evaluate_chunked(det, data, chunk_vocabulary(vocab, 4), {{"rare", {"unicorn"}}});
  CHECK(r.per_class_ap.count("unicorn") == 0);
  CHECK_FALSE(r.groups.at("rare").has_value());

  CHECK_THROWS_AS(evaluate_chunked(det, data, chunk_vocabulary(vocab, 4), {{"rare", {"unicorn"}}, {"common", {"unicorn"}}}),
                  ConfigError);
  CHECK_THROWS_AS(evaluate_chunked(det, data, chunk_vocabulary({"unicorn"}, 4), {}), ArgumentError);
  CHECK_THROWS_AS(evaluate_chunked(det, data, chunk_vocabulary({"a", "a"}, 4), {}), ArgumentError);
}

TEST_CASE("the per-class detection cap truncates the pooled list") {
  const Detector det(small_detector(), 11);
  const auto data = ten_class_dataset();
  const auto vocab = chunk_vocabulary(synth_vocabulary(10), 5);
  EvalOptions none;
  none.max_dets_per_class = 0;
  CHECK(evaluate_chunked(det, data, vocab, {}, none).overall_ap == 0.0);
  EvalOptions wide;
  wide.max_dets_per_class = 1000000;
  CHECK(evaluate_chunked(det, data, vocab, {}, wide).overall_ap == evaluate_chunked(det, data, vocab, {}).overall_ap);
}

TEST_CASE("report JSON round trip and groups file") {
  EvalReport r;
  r.per_class_ap = {{"cup", 0.25}, {"fork", 0.5}};
  r.gt_counts = {{"cup", 2}, {"fork", 1}};
  r.groups = {{"rare", 0.25}, {"common", std::nullopt}};
  r.overall_ap = 0.375;
  const auto back = report_from_json(report_to_json(r));
  CHECK(back.per_class_ap == r.per_class_ap);
  CHECK(back.gt_counts == r.gt_counts);
  CHECK(back.groups == r.groups);
  CHECK(back.overall_ap == r.overall_ap);
  CHECK_THROWS_AS(report_from_json("{"), ParseError);
  CHECK_THROWS_AS(report_from_json("{}"), ValidationError);

  const auto g = parse_groups("# freq\nrare: cup, fork\n\ncommon : chair\n");
  CHECK(g.at("rare") == std::vector<std::string>{"cup", "fork"});
  CHECK(g.at("common") == std::vector<std::string>{"chair"});
  CHECK_THROWS_AS(parse_groups("rare cup\n"), ConfigError);
}

TEST_CASE("REC subject extraction") {
  CHECK(rec_subject("the man with an umbrella") == "man");
  CHECK(rec_subject("umbrella") == "umbrella");
  CHECK(rec_subject("a small red ferik on the left") == "ferik");
  CHECK(rec_subject("with") == "");
}

TEST_CASE("REC selection filters by the subject span") {
  const std::string expr = "the man with an umbrella";
  const std::vector<PhraseSpan> spans{{0, 7}, {13, 24}};
  const std::vector<BoxXYXY> boxes{{40, 0, 60, 20}, {0, 0, 30, 60}, {5, 5, 10, 10}};
  // Query 0 is the most confident overall but aligns with "an umbrella".
  Matrix logits(3, 2, std::vector<double>{-2.0, 6.0, 1.5, -1.0, 0.5, 0.0});
  const auto r = rec_select(expr, spans, logits, boxes);
  REQUIRE(r.found);
  CHECK(r.subject == "man");
  CHECK(r.box == boxes[1]);
  CHECK(r.score == doctest::Approx(1.0 / (1.0 + std::exp(-1.5))));
  CHECK(expr.find(r.subject) != std::string::npos);

  Matrix none(3, 2, std::vector<double>{0.0, 1.0, 0.0, 1.0, 0.0, 1.0});
  const auto empty = rec_select(expr, spans, none, boxes);
  CHECK_FALSE(empty.found);
  CHECK(empty.subject == "man");
  CHECK_THROWS_AS(rec_select(expr, spans, Matrix(2, 2), boxes), ArgumentError);

  const Detector det(small_detector(), 3);
  const Image img = render_scene(generate_scene(4, 6));
  const auto live = rec_localize(det, img, expr);
  CHECK(live.subject == "man");
  CHECK_FALSE(rec_localize(det, img, "with").found);
  CHECK_THROWS_AS(rec_localize(det, img, ""), ArgumentError);
}

TEST_CASE("suite aggregation") {
  auto rep = [](double ap) {
    EvalReport r;
    r.overall_ap = ap;
    return r;
  };
  CHECK(aggregate_suite({{"a", rep(0.2)}, {"b", rep(0.4)}}) == doctest::Approx(0.3));
  CHECK(aggregate_suite({{"a", rep(0.2)}, {"b", rep(0.4)}}, {"b"}) == 0.4);
  CHECK_THROWS_AS(aggregate_suite({{"a", rep(0.2)}}, {"z"}), ArgumentError);
  CHECK_THROWS_AS(aggregate_suite({}), ArgumentError);

  std::map<std::string, EvalReport> suite;
  std::vector<std::string> thirteen;
  for (int i = 0; i < 35; ++i) {
    const std::string n = "ds" + std::to_string(i);
    suite[n] = rep(i / 35.0);
    if (i % 2 == 0 && thirteen.size() < 13) thirteen.push_back(n);
  }
  REQUIRE(thirteen.size() == 13);
  const double all = aggregate_suite(suite), sub = aggregate_suite(suite, thirteen);
  CHECK(all == doctest::Approx(17.0 / 35.0));
  CHECK(all != sub);
}

TEST_CASE("detector-only checkpoints load without any language-model state") {
  auto cfg = small_detector();
  cfg.patch_pool = 2;
  Detector det(cfg, 21);
  CHECK(detector_config_from_fingerprint(cfg.fingerprint()).fingerprint() == cfg.fingerprint());
  CHECK_THROWS_AS(detector_config_from_fingerprint("detector/c8"), CheckpointError);
  CHECK_THROWS_AS(detector_config_from_fingerprint(cfg.fingerprint() + "x"), CheckpointError);

  const auto dir = std::filesystem::temp_directory_path();
  const auto path = (dir / "ovdlab_eval_det.ckpt").string();
  save_checkpoint(path, {0, 0, 21}, {{"detector", cfg.fingerprint(), &det.params()}}, nullptr);
  const auto loaded = load_detector(path);
  CHECK(loaded->config().fingerprint() == cfg.fingerprint());
  const Image img = render_scene(generate_scene(8, 6));
  const auto a = det.score_all(img, synth_vocabulary(6));
  const auto b = loaded->score_all(img, synth_vocabulary(6));
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].score == b[i].score);
    CHECK(a[i].bbox == b[i].bbox);
  }

  ParamStore other(1);
  other.add_normal("x", "llm", 1, 1, 1.0);
  const auto no_det = (dir / "ovdlab_eval_nodet.ckpt").string();
  save_checkpoint(no_det, {0, 0, 0}, {{"llm", "llm/x", &other}}, nullptr);
  CHECK_THROWS_AS(load_detector(no_det), CheckpointError);
}
