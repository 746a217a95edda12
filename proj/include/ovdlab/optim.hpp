#pragma once

#include <map>
#include <string>

#include "ovdlab/nn.hpp"

namespace ovdlab {

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled; applied to ".weight" tensors only
};

struct AdamWSlot {
  Matrix m, v;
  long t = 0;
};

// Decoupled-weight-decay Adam. State is keyed by parameter name, so several
// stores can share one optimizer as long as their names do not collide.
// Parameters with requires_grad off are skipped entirely, decay included.
class AdamW {
 public:
  explicit AdamW(AdamWOptions opts = {}) : opts_(opts) {}

  void set_group_lr(const std::string& group, double lr) { group_lr_[group] = lr; }
  double lr_for(const std::string& group) const;
  const AdamWOptions& options() const { return opts_; }

  void step(ParamStore& store);

  const std::map<std::string, AdamWSlot>& state() const { return state_; }
  void set_state(std::map<std::string, AdamWSlot> s) { state_ = std::move(s); }

 private:
  AdamWOptions opts_;
  std::map<std::string, double> group_lr_;
  std::map<std::string, AdamWSlot> state_;
};

}  // namespace ovdlab
