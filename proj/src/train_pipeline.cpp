#include "ovdlab/train_pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "ovdlab/errors.hpp"

namespace ovdlab {

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::full() {
  TrainConfig c;
  c.iterations = 150000;
  c.batch_size = 16;
  c.caps = GenerationCaps::full();
  c.grid = TokenGrid::full();
  return c;
}

TrainConfig train_config_from(const KeyValueConfig& kv) {
  const auto profile = kv.get_string("profile", "desk");
  TrainConfig c;
  if (profile == "full") {
    c = TrainConfig::full();
  } else if (profile != "desk") {
    throw ConfigError("profile must be desk or full, got '" + profile + "'");
  }
  const long step = kv.get_int("step", static_cast<long>(c.step));
  if (step != 1 && step != 2) throw ConfigError("step must be 1 or 2");
  c.step = static_cast<TrainStep>(step);
  c.iterations = static_cast<int>(kv.get_int("iterations", c.iterations));
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long>(c.seed)));
  c.lr_detector = kv.get_double("lr_detector", c.lr_detector);
  c.lr_projector = kv.get_double("lr_projector", c.lr_projector);
  c.lr_llm = kv.get_double("lr_llm", c.lr_llm);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.toggles.use_region_gen = kv.get_bool("use_region_gen", c.toggles.use_region_gen);
  c.toggles.use_image_gen = kv.get_bool("use_image_gen", c.toggles.use_image_gen);
  c.toggles.use_ca_region = kv.get_bool("use_ca_region", c.toggles.use_ca_region);
  c.toggles.pretrain_projector = kv.get_bool("pretrain_projector", c.toggles.pretrain_projector);
  c.caps.image_tokens = static_cast<int>(kv.get_int("image_cap", c.caps.image_tokens));
  c.caps.region_tokens = static_cast<int>(kv.get_int("region_cap", c.caps.region_tokens));
  c.caps.max_regions = static_cast<int>(kv.get_int("max_regions", c.caps.max_regions));
  c.grid.a = static_cast<int>(kv.get_int("grid_a", c.grid.a));
  c.grid.b = static_cast<int>(kv.get_int("grid_b", c.grid.b));
  c.detector.channels = static_cast<int>(kv.get_int("detector_channels", c.detector.channels));
  c.detector.queries = static_cast<int>(kv.get_int("detector_queries", c.detector.queries));
  c.llm.dim = static_cast<int>(kv.get_int("llm_dim", c.llm.dim));
  c.llm.heads = static_cast<int>(kv.get_int("llm_heads", c.llm.heads));
  c.llm.blocks = static_cast<int>(kv.get_int("llm_blocks", c.llm.blocks));
  c.llm.detector_channels = c.detector.channels;
  kv.reject_unused();

  if (c.iterations < 0) throw ConfigError("iterations must be >= 0");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (c.caps.image_tokens < 1 || c.caps.region_tokens < 1 || c.caps.max_regions < 0)
    throw ConfigError("caps must be positive");
  if (c.grid.a < 0 || c.grid.b < 0 || c.grid.a + c.grid.b == 0) throw ConfigError("token grid must be non-empty");
  return c;
}

TotalLossTerms total_loss(const GroundingLossParts& parts, const CaptionLossParts& caps, const Toggles& toggles,
                          long step) {
  auto value = [&](const ag::Var& v, const char* name) {
    if (!v.defined()) return 0.0;
    const double x = v.item();
    if (!std::isfinite(x))
      throw TrainingAbort(std::string("non-finite ") + name + " loss at iteration " + std::to_string(step), step);
    return x;
  };
  TotalLossTerms t;
  t.values.align = value(parts.align, "align");
  t.values.box = value(parts.box, "box");
  if (toggles.use_image_gen) t.values.lm_image = value(caps.image, "lm_image");
  if (toggles.use_region_gen) t.values.lm_region = value(caps.region, "lm_region");

  std::vector<ag::Var> terms;
  if (parts.align.defined()) terms.push_back(parts.align);
  if (parts.box.defined()) terms.push_back(parts.box);
  if (toggles.use_image_gen && caps.image.defined()) terms.push_back(caps.image);
  if (toggles.use_region_gen && caps.region.defined()) terms.push_back(caps.region);
  t.total = terms.empty() ? ag::Var::scalar(0.0) : terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) t.total = t.total + terms[i];
  t.values.total = t.total.item();
  return t;
}

std::string csv_header() { return "iter,align,box,lm_image,lm_region,total"; }

std::string csv_row(long iteration, const TotalLoss& l) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g", iteration, l.align, l.box, l.lm_image,
                l.lm_region, l.total);
  return buf;
}

std::vector<TrainSample> prepare_samples(const std::vector<Quadruple>& records) {
  std::vector<TrainSample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    TrainSample s;
    s.record = r;
    s.image = load_image(r.image);
    s.targets = make_targets(r);
    for (const auto& b : r.boxes) s.gt_phrases.push_back(b.phrase);
    out.push_back(std::move(s));
  }
  return out;
}

TrainSession::TrainSession(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.llm.detector_channels = cfg_.detector.channels;
  det_ = std::make_unique<Detector>(cfg_.detector, cfg_.seed);
  llm_ = std::make_unique<CaptionModel>(cfg_.llm, cfg_.seed ^ 0x5eedULL);
  AdamWOptions o;
  o.weight_decay = cfg_.weight_decay;
  opt_ = std::make_unique<AdamW>(o);
  for (const char* g : {"backbone", "encoder", "decoder", "text"}) opt_->set_group_lr(g, cfg_.lr_detector);
  opt_->set_group_lr("projector", cfg_.lr_projector);
  opt_->set_group_lr("llm", cfg_.lr_llm);
  apply_freezing();
}

void TrainSession::apply_freezing() {
  if (cfg_.step == TrainStep::align_projector) {
    det_->params().set_trainable_groups({});
    llm_->params().set_trainable_groups({"projector"});
  } else {
    det_->params().set_trainable_groups({"encoder", "decoder", "text"});
    llm_->params().set_trainable_groups({"projector", "llm"});
  }
}

void TrainSession::load(const std::string& path) {
  const auto info = inspect_checkpoint(path);
  const int want = static_cast<int>(cfg_.step);
  if (info.meta.step != 1 && info.meta.step != 2)
    throw CheckpointError("checkpoint " + path + " is not a training checkpoint (step " +
                          std::to_string(info.meta.step) + ")");
  if (info.meta.step > want) throw CheckpointError("cannot run step 1 from a step-2 checkpoint");
  if (cfg_.step == TrainStep::finetune && info.meta.step == 1 && !cfg_.toggles.pretrain_projector)
    throw ConfigError("pretrain_projector = false runs step 2 from scratch; drop the step-1 checkpoint");
  const bool resume = info.meta.step == want;
  std::vector<StoreRef> stores = {{"detector", cfg_.detector.fingerprint(), &det_->params()},
                                  {"llm", cfg_.llm.fingerprint(), &llm_->params()}};
  if (resume) {
    const auto meta = load_checkpoint(path, stores, opt_.get());
    iteration_ = meta.iteration;
  } else {
    load_checkpoint(path, stores, nullptr);
    iteration_ = 0;
  }
  loaded_step_ = info.meta.step;
  apply_freezing();
}

void TrainSession::save(const std::string& path) const {
  CheckpointMeta meta;
  meta.step = static_cast<int>(cfg_.step);
  meta.iteration = iteration_;
  meta.seed = cfg_.seed;
  save_checkpoint(path, meta,
                  {{"detector", cfg_.detector.fingerprint(), &det_->params()},
                   {"llm", cfg_.llm.fingerprint(), &llm_->params()}},
                  opt_.get());
}

void TrainSession::export_detector(const std::string& path) const {
  CheckpointMeta meta;
  meta.iteration = iteration_;
  meta.seed = cfg_.seed;
  save_checkpoint(path, meta, {{"detector", cfg_.detector.fingerprint(), &det_->params()}}, nullptr);
}

std::vector<int> TrainSession::batch_indices(long iteration, int dataset_size) const {
  if (dataset_size <= 0) throw ArgumentError("training data is empty");
  std::vector<int> out;
  long cached_epoch = -1;
  std::vector<int> perm;
  for (int k = 0; k < cfg_.batch_size; ++k) {
    const long flat = iteration * cfg_.batch_size + k;
    const long epoch = flat / dataset_size;
    if (epoch != cached_epoch) {
      perm.resize(dataset_size);
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(fnv1a64("epoch:" + std::to_string(epoch), cfg_.seed ^ 0xda7aULL));
      for (int i = dataset_size - 1; i > 0; --i)
        std::swap(perm[i], perm[rng.next_u64() % static_cast<std::uint64_t>(i + 1)]);
      cached_epoch = epoch;
    }
    out.push_back(perm[flat % dataset_size]);
  }
  return out;
}

TotalLossTerms TrainSession::sample_loss(const TrainSample& s) const {
  const auto fp = det_->extract_features(s.image);
  CaptionLossParts caps;
  GroundingLossParts parts;
  if (cfg_.step == TrainStep::align_projector) {
    const auto v = llm_->project_image_tokens(fp, cfg_.grid);
    const auto conv = build_conversation(VisualKind::image_level, v, s.record.caption, cfg_.caps);
    caps.image = llm_->lm_loss(conv, v, Routing::ca_off).loss;
    Toggles only_image;
    only_image.use_region_gen = false;
    return total_loss(parts, caps, only_image, iteration_);
  }

  const auto& t = s.targets;
  if (!t.phrase_spans.empty()) {
    const auto pe = det_->embed_text(s.record.grounding_text, t.phrase_spans);
    const auto qs = det_->decode_queries(fp, pe);
    const auto match = match_hungarian(qs, t.boxes, {cfg_.detector.cost_class, cfg_.detector.cost_l1,
                                                     cfg_.detector.cost_giou});
    parts = grounding_losses(qs, match, t.boxes, cfg_.detector);
    if (cfg_.toggles.use_region_gen) {
      const auto pairs = select_positive_queries(match, qs, s.gt_phrases, cfg_.caps.max_regions);
      caps.region = llm_->region_caption_loss(pairs, fp, cfg_.caps,
                                              cfg_.toggles.use_ca_region ? Routing::ca_on : Routing::ca_off);
    }
  }
  if (cfg_.toggles.use_image_gen) {
    const auto v = llm_->project_image_tokens(fp, cfg_.grid);
    const auto conv = build_conversation(VisualKind::image_level, v, s.record.caption, cfg_.caps);
    caps.image = llm_->lm_loss(conv, v, Routing::ca_off).loss;
  }
  return total_loss(parts, caps, cfg_.toggles, iteration_);
}

TotalLoss TrainSession::train_iteration(const std::vector<TrainSample>& data) {
  det_->params().zero_grad();
  llm_->params().zero_grad();
  TotalLoss mean;
  const double inv = 1.0 / cfg_.batch_size;
  for (const int idx : batch_indices(iteration_, static_cast<int>(data.size()))) {
    const auto terms = sample_loss(data[idx]);
    if (terms.total.requires_grad()) ag::backward(ag::scale(terms.total, inv));
    mean.align += terms.values.align * inv;
    mean.box += terms.values.box * inv;
    mean.lm_image += terms.values.lm_image * inv;
    mean.lm_region += terms.values.lm_region * inv;
    mean.total += terms.values.total * inv;
  }
  for (ParamStore* store : {&det_->params(), &llm_->params()})
    for (const auto& p : store->params())
      if (!p.var.requires_grad() && p.var.has_grad())
        throw TrainingAbort("gradient reached frozen parameter " + p.name, iteration_);
  opt_->step(det_->params());
  opt_->step(llm_->params());
  ++iteration_;
  return mean;
}

namespace {

std::vector<TotalLoss> run_loop(TrainSession& session, const std::vector<TrainSample>& data, std::ostream* log) {
  std::vector<TotalLoss> curve;
  if (log && session.iteration() == 0) *log << csv_header() << '\n';
  while (session.iteration() < session.config().iterations) {
    const long it = session.iteration();
    const auto l = session.train_iteration(data);
    curve.push_back(l);
    if (log) *log << csv_row(it, l) << '\n' << std::flush;
  }
  return curve;
}

}  // namespace

std::vector<TotalLoss> run_step1(TrainSession& session, const std::vector<TrainSample>& data, std::ostream* log) {
  if (session.config().step != TrainStep::align_projector) throw ConfigError("run_step1 needs step = 1");
  return run_loop(session, data, log);
}

std::vector<TotalLoss> run_step2(TrainSession& session, const std::vector<TrainSample>& data, std::ostream* log) {
  const auto& cfg = session.config();
  if (cfg.step != TrainStep::finetune) throw ConfigError("run_step2 needs step = 2");
  if (cfg.toggles.pretrain_projector && session.loaded_step() == 0)
    throw ConfigError("pretrain_projector = true needs a step-1 checkpoint (or set pretrain_projector = false)");
  return run_loop(session, data, log);
}

}  // namespace ovdlab
