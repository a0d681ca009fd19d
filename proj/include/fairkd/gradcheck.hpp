// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "fairkd/tensor.hpp"

namespace fairkd {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  /// Coordinates where the analytic or numeric derivative was not finite.
  std::vector<std::size_t> non_finite;
};

/// Function under test. It receives the probe tensor and must rebuild its
/// graph from the current values on every call.
using ScalarFn = std::function<Tensor<double>(Tensor<double>&)>;

/// Compares backward() against central differences, coordinate by coordinate:
///   |a - n| / (|a| + |n| + 1e-12),  n = (f(x + h e_i) - f(x - h e_i)) / 2h.
/// `x` is made a gradient leaf for the duration of the check and restored
/// afterwards. Non-finite coordinates force the result to +inf.
GradCheckReport finite_diff_check(const ScalarFn& f, Tensor<double> x, double h = 1e-5);

}  // namespace fairkd
