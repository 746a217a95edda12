#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ovdlab/autograd.hpp"
#include "ovdlab/nn.hpp"

namespace ovdlab::testing {

struct GradCheckReport {
  int checked = 0;
  int failed = 0;
  double worst_rel = 0.0;
  std::string worst_where;
};

struct GradTarget {
  std::string name;
  ag::Var var;
};

// Compares the analytic gradient of loss() against central differences at up
// to max_coords coordinates spread over all targets. loss() must rebuild the
// graph from the current leaf values on every call.
inline GradCheckReport gradcheck(const std::function<ag::Var()>& loss, const std::vector<GradTarget>& targets,
                                 double eps = 1e-4, double rtol = 1e-3, double atol = 1e-8, int max_coords = 1000,
                                 std::uint64_t seed = 7) {
  for (const auto& t : targets) t.var.node()->grad = Matrix();
  const auto root = loss();
  ag::backward(root);
  std::vector<Matrix> analytic;
  std::size_t total = 0;
  for (const auto& t : targets) {
    analytic.push_back(t.var.grad());
    total += t.var.value().size();
  }

  // Every tensor gets at least one probe; the rest are spread proportionally.
  Rng rng(seed);
  GradCheckReport rep;
  const double share = std::min(1.0, static_cast<double>(max_coords) / static_cast<double>(std::max<std::size_t>(total, 1)));
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    auto var = targets[ti].var;
    const int n = static_cast<int>(var.value().size());
    const int want = std::max(1, static_cast<int>(std::floor(share * n)));
    std::vector<int> coords;
    if (want >= n) {
      for (int i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int i = 0; i < want; ++i) coords.push_back(rng.uniform_int(0, n - 1));
    }
    for (int c : coords) {
      double& slot = var.mutable_value()[c];
      const double orig = slot;
      slot = orig + eps;
      double up;
      double down;
      {
        ag::NoGradGuard ng;
        up = loss().item();
        slot = orig - eps;
        down = loss().item();
      }
      slot = orig;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[ti][c];
      const double err = std::fabs(a - numeric);
      const double scale = std::max(std::fabs(a), std::fabs(numeric));
      const double rel = scale > 0 ? err / scale : 0.0;
      ++rep.checked;
      if (err > rtol * scale + atol) {
        ++rep.failed;
      }
      if (err > atol && rel > rep.worst_rel) {
        rep.worst_rel = rel;
        rep.worst_where = targets[ti].name + "[" + std::to_string(c) + "] analytic=" + std::to_string(a) +
                          " numeric=" + std::to_string(numeric);
      }
    }
  }
  return rep;
}

inline std::vector<GradTarget> targets_of(const ParamStore& store) {
  std::vector<GradTarget> out;
  for (const auto& p : store.params())
    if (p.var.requires_grad()) out.push_back({p.name, p.var});
  return out;
}

}  // namespace ovdlab::testing
