// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "hsakd/tensor.hpp"

namespace hsakd {

struct GradCheckReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  /// |analytic - numeric| / max(|analytic|, |numeric|, floor) per coordinate.
  std::vector<double> rel_error;
  double max_rel_error = 0.0;
  double tol = 0.0;
  bool passed = false;
};

/// Compares tape gradients of a scalar-valued `f` at `point` against central
/// differences with step `step`. `point` is copied; `f` receives a leaf that
/// requires grad. Errors below `floor` magnitude are measured absolutely.
GradCheckReport gradient_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& point, double step, double tol,
                               double floor = 1e-3);

}  // namespace hsakd
