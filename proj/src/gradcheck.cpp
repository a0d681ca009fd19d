// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fairkd/gradcheck.hpp"

#include <cmath>
#include <limits>

namespace fairkd {

GradCheckReport finite_diff_check(const ScalarFn& f, Tensor<double> x, double h) {
  if (!(h > 0)) throw ValueError("finite_diff_check: step h must be positive");
  const bool had_grad = x.requires_grad();
  if (!had_grad) x.set_requires_grad(true);
  x.zero_grad();

  Tensor<double> y = f(x);
  backward(y);
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());

  GradCheckReport report;
  auto v = x.mutable_values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double saved = v[i];
    v[i] = saved + h;
    const double fp = f(x).item();
    v[i] = saved - h;
    const double fm = f(x).item();
    v[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    if (!std::isfinite(numeric) || !std::isfinite(a)) {
      report.non_finite.push_back(i);
      report.max_rel_error = std::numeric_limits<double>::infinity();
      report.worst_index = i;
      continue;
    }
    const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  if (!had_grad) x.set_requires_grad(false);
  return report;
}

}  // namespace fairkd
