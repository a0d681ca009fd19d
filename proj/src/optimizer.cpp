// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <iostream>

#include "fairkd/error.hpp"
#include "fairkd/train.hpp"

namespace fairkd {

double lr_at(double f, double peak_lr, double warmup) {
  if (!(warmup >= 0.0 && warmup < 1.0)) throw ValueError("lr_at: warmup must lie in [0, 1)");
  if (!(f >= 0.0 && f <= 1.0)) {
    std::cerr << "fairkd: warning: step fraction " << f << " outside [0, 1], clamped\n";
    f = std::isnan(f) ? 0.0 : std::min(1.0, std::max(0.0, f));
  }
  if (f < warmup) return peak_lr * f / warmup;
  return peak_lr * (1.0 - f) / (1.0 - warmup);
}

template <typename T>
OptimizerState make_optimizer_state(const std::vector<NamedParameter<T>>& params,
                                    const AdamWConfig& config) {
  OptimizerState s;
  s.config = config;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.size(), 0.0);
    s.v.emplace_back(p.tensor.size(), 0.0);
  }
  return s;
}

template <typename T>
bool adamw_step(const std::vector<NamedParameter<T>>& params, OptimizerState& state, double lr) {
  if (params.size() != state.m.size()) {
    throw ValueError("adamw_step: optimizer state tracks " + std::to_string(state.m.size()) +
                     " tensors but " + std::to_string(params.size()) + " were given");
  }
  for (const auto& p : params) {
    if (!p.tensor.requires_grad()) continue;
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(g)) {
        ++state.rejected;
        std::cerr << "fairkd: warning: non-finite gradient in '" << p.name << "', step "
                  << state.step + 1 << " rejected\n";
        return false;
      }
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> tensor = params[i].tensor;
    if (!tensor.requires_grad()) continue;
    if (state.m[i].size() != tensor.size()) {
      throw ShapeError("adamw_step: state size mismatch for '" + params[i].name + "'");
    }
    auto w = tensor.mutable_values();
    auto g = tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const double decay = params[i].decay ? 1.0 - lr * c.weight_decay : 1.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.eps);
      w[j] = static_cast<T>(static_cast<double>(w[j]) * decay - lr * update);
    }
  }
  return true;
}

template OptimizerState make_optimizer_state(const std::vector<NamedParameter<float>>&,
                                             const AdamWConfig&);
template OptimizerState make_optimizer_state(const std::vector<NamedParameter<double>>&,
                                             const AdamWConfig&);
template bool adamw_step(const std::vector<NamedParameter<float>>&, OptimizerState&, double);
template bool adamw_step(const std::vector<NamedParameter<double>>&, OptimizerState&, double);

}  // namespace fairkd
