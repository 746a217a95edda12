#include "ovdlab/optim.hpp"

#include <cmath>

namespace ovdlab {

double AdamW::lr_for(const std::string& group) const {
  auto it = group_lr_.find(group);
  return it == group_lr_.end() ? opts_.lr : it->second;
}

void AdamW::step(ParamStore& store) {
  for (const auto& p : store.params()) {
    if (!p.var.requires_grad() || !p.var.has_grad()) continue;
    const double lr = lr_for(p.group);
    if (lr == 0.0) continue;
    auto& slot = state_[p.name];
    const auto& g = p.var.node()->grad;
    auto& w = p.var.node()->value;
    if (slot.m.empty()) {
      slot.m = Matrix(w.rows(), w.cols());
      slot.v = Matrix(w.rows(), w.cols());
    }
    ++slot.t;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(slot.t));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(slot.t));
    const bool decay = opts_.weight_decay > 0 && p.name.size() >= 7 && p.name.ends_with(".weight");
    for (std::size_t i = 0; i < w.size(); ++i) {
      slot.m[i] = opts_.beta1 * slot.m[i] + (1.0 - opts_.beta1) * g[i];
      slot.v[i] = opts_.beta2 * slot.v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      if (decay) w[i] -= lr * opts_.weight_decay * w[i];
      w[i] -= lr * mhat / (std::sqrt(vhat) + opts_.eps);
    }
  }
}

}  // namespace ovdlab
