#pragma once

#include <cstdint>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "ovdlab/checkpoint.hpp"
#include "ovdlab/config.hpp"
#include "ovdlab/llm_supervisor.hpp"
#include "ovdlab/optim.hpp"
#include "ovdlab/ovd_core.hpp"

// Two-step schedule: projector alignment on image captions, then end-to-end
// finetuning of detector (backbone frozen), projector and language model.
namespace ovdlab {

enum class TrainStep { align_projector = 1, finetune = 2 };

struct Toggles {
  bool use_region_gen = true;
  bool use_image_gen = true;
  bool use_ca_region = true;
  bool pretrain_projector = true;
};

struct TrainConfig {
  TrainStep step = TrainStep::finetune;
  Toggles toggles;
  GenerationCaps caps = GenerationCaps::desk();
  TokenGrid grid = TokenGrid::desk();
  int iterations = 500;
  int batch_size = 4;
  double lr_detector = 3e-3;
  double lr_projector = 3e-3;
  double lr_llm = 3e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  DetectorConfig detector;
  LlmConfig llm;

  static TrainConfig desk();
  // Full-scale schedule: 150000 iterations at batch 16 with the long caps.
  static TrainConfig full();
};

// Keys: profile (desk|full), step, iterations, batch_size, seed, lr_detector,
// lr_projector, lr_llm, weight_decay, use_region_gen, use_image_gen,
// use_ca_region, pretrain_projector, image_cap, region_cap, max_regions,
// grid_a, grid_b, detector_channels, detector_queries, llm_dim, llm_heads,
// llm_blocks. Unknown keys are rejected.
TrainConfig train_config_from(const KeyValueConfig& kv);

struct TotalLoss {
  double align = 0.0;
  double box = 0.0;
  double lm_image = 0.0;
  double lm_region = 0.0;
  double total = 0.0;
};

struct TotalLossTerms {
  ag::Var total;
  TotalLoss values;
};

// Unit-weight sum. Disabled generation terms are left out of the graph, so
// they add exactly 0 and send no gradient. Non-finite parts abort training.
TotalLossTerms total_loss(const GroundingLossParts& parts, const CaptionLossParts& caps, const Toggles& toggles,
                          long step = 0);

std::string csv_header();
std::string csv_row(long iteration, const TotalLoss& l);

// A training sample with its decoded image and targets.
struct TrainSample {
  Quadruple record;
  Image image;
  GroundingTargets targets;
  std::vector<std::string> gt_phrases;
};
std::vector<TrainSample> prepare_samples(const std::vector<Quadruple>& records);

class TrainSession {
 public:
  explicit TrainSession(const TrainConfig& cfg);

  const TrainConfig& config() const { return cfg_; }
  Detector& detector() { return *det_; }
  CaptionModel& llm() { return *llm_; }
  AdamW& optimizer() { return *opt_; }
  long iteration() const { return iteration_; }
  // Step of the last checkpoint loaded into this session, 0 when fresh.
  int loaded_step() const { return loaded_step_; }

  // Loads weights from a checkpoint. Resuming the same step also restores the
  // optimizer and iteration count; a step-1 checkpoint seeds step 2 fresh.
  void load(const std::string& path);
  void save(const std::string& path) const;
  // Detector weights only, for evaluation without any language-model state.
  void export_detector(const std::string& path) const;

  // Per-sample loss for the configured step (graph built, nothing applied).
  TotalLossTerms sample_loss(const TrainSample& s) const;
  // One optimizer step over the next batch in the seeded sample order.
  TotalLoss train_iteration(const std::vector<TrainSample>& data);

  // Indices of the batch at a given iteration; a pure function of the seed.
  std::vector<int> batch_indices(long iteration, int dataset_size) const;

 private:
  void apply_freezing();

  TrainConfig cfg_;
  std::unique_ptr<Detector> det_;
  std::unique_ptr<CaptionModel> llm_;
  std::unique_ptr<AdamW> opt_;
  long iteration_ = 0;
  int loaded_step_ = 0;
};

// Run the configured number of iterations from the session's current
// iteration, appending one CSV row per iteration to log when given.
std::vector<TotalLoss> run_step1(TrainSession& session, const std::vector<TrainSample>& data, std::ostream* log);
std::vector<TotalLoss> run_step2(TrainSession& session, const std::vector<TrainSample>& data, std::ostream* log);

}  // namespace ovdlab
