// SPDX-License-Identifier: Apache-2.0
#include "hsakd/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace hsakd {
namespace {

double eval_scalar(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  NoGradGuard guard;
  const Tensor y = f(x);
  if (y.numel() != 1) {
    throw ContractError("gradient_check: function is not scalar-valued, shape " +
                        shape_str(y.shape()));
  }
  const double v = y.item();
  if (!std::isfinite(v)) {
    throw NumericError("gradient_check: non-finite function value");
  }
  return v;
}

}  // namespace

GradCheckReport gradient_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& point, double step, double tol,
                               double floor) {
  if (!(step > 0.0)) throw ContractError("gradient_check: step must be positive");
  GradCheckReport report;
  report.tol = tol;

  Tensor x = point.detach();
  x.set_requires_grad(true);
  const Tensor y = f(x);
  if (y.numel() != 1) {
    throw ContractError("gradient_check: function is not scalar-valued, shape " +
                        shape_str(y.shape()));
  }
  if (!std::isfinite(y.item())) {
    throw NumericError("gradient_check: non-finite value at point");
  }
  const std::size_t n = x.numel();
  if (y.impl()->producer) backward(y);
  report.analytic = x.has_grad() ? x.grad_vector() : std::vector<double>(n, 0.0);

  report.numeric.resize(n);
  report.rel_error.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor probe = point.detach();
    const double base = probe.at(i);
    probe.mutable_storage().set(i, base + step);
    const double plus = eval_scalar(f, probe);
    probe.mutable_storage().set(i, base - step);
    const double minus = eval_scalar(f, probe);
    report.numeric[i] = (plus - minus) / (2.0 * step);
    const double a = report.analytic[i];
    const double num = report.numeric[i];
    const double denom = std::max({std::abs(a), std::abs(num), floor});
    report.rel_error[i] = std::abs(a - num) / denom;
    report.max_rel_error = std::max(report.max_rel_error, report.rel_error[i]);
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace hsakd
