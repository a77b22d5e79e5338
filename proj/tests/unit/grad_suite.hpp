// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference cases for every differentiable primitive and every loss.
// Shared by the unit tests and the acceptance binary.
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hsakd/grad_check.hpp"
#include "hsakd/losses.hpp"
#include "hsakd/ops.hpp"
#include "test_support.hpp"

namespace hsakd::testing {

struct GradCase {
  std::string name;
  std::function<Tensor(const Tensor&)> f;
  Tensor point;
};

struct GradFamilyResult {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

namespace detail {

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Scalarizes a tensor through a fixed random weighting so every output
// coordinate contributes a distinct gradient.
inline std::function<Tensor(const Tensor&)> weighted(std::mt19937_64& rng, const Shape& out,
                                                     std::function<Tensor(const Tensor&)> g) {
  const Tensor r = random_tensor(rng, out);
  return [r, g](const Tensor& x) { return reduce_sum(mul(g(x), r)); };
}

// Values bounded away from the relu kink.
inline Tensor away_from_zero(std::mt19937_64& rng, const Shape& shape) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    const double s = d(rng);
    x = (s < 0 ? -0.1 : 0.1) + s;
  }
  return Tensor::from_values(shape, v, DType::f64);
}

// Distinct values with gaps far larger than the difference step.
inline Tensor distinct_values(std::mt19937_64& rng, const Shape& shape) {
  std::vector<double> v(shape_numel(shape));
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), rng);
  for (double& x : v) x = 0.1 * x - 1.0;
  return Tensor::from_values(shape, v, DType::f64);
}

inline std::vector<std::size_t> random_labels(std::mt19937_64& rng, std::size_t n,
                                              std::size_t classes) {
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = pick(rng, 0, classes - 1);
  return y;
}

}  // namespace detail

/// Builds `instances` random cases for each family, all in 64-bit.
inline std::vector<std::vector<GradCase>> grad_families(std::size_t instances,
                                                        std::uint64_t seed) {
  using detail::pick;
  using detail::weighted;
  std::mt19937_64 rng(seed);
  std::vector<std::vector<GradCase>> fams;
  auto family = [&](const std::string& name, auto make) {
    std::vector<GradCase> cases;
    for (std::size_t i = 0; i < instances; ++i) {
      GradCase c = make();
      c.name = name;
      cases.push_back(std::move(c));
    }
    fams.push_back(std::move(cases));
  };
  const auto f64 = DType::f64;

  family("add", [&] {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 5)};
    const Tensor b = random_tensor(rng, s, f64);
    return GradCase{"", weighted(rng, s, [b](const Tensor& x) { return add(x, b); }),
                    random_tensor(rng, s, f64)};
  });
  family("sub", [&] {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 5)};
    const Tensor a = random_tensor(rng, s, f64);
    return GradCase{"", weighted(rng, s, [a](const Tensor& x) { return sub(a, x); }),
                    random_tensor(rng, s, f64)};
  });
  family("mul", [&] {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 5)};
    const Tensor b = random_tensor(rng, s, f64);
    return GradCase{"", weighted(rng, s, [b](const Tensor& x) { return mul(mul(x, b), x); }),
                    random_tensor(rng, s, f64)};
  });
  family("mul_scalar", [&] {
    const Shape s{pick(rng, 1, 6)};
    const double k = std::normal_distribution<double>(0.0, 2.0)(rng);
    return GradCase{"", weighted(rng, s, [k](const Tensor& x) { return mul_scalar(x, k); }),
                    random_tensor(rng, s, f64)};
  });
  family("add_bias", [&] {
    const std::size_t c = pick(rng, 1, 4);
    const Shape s{pick(rng, 1, 3), c, pick(rng, 1, 3), pick(rng, 1, 3)};
    const Tensor x = random_tensor(rng, s, f64);
    return GradCase{"", weighted(rng, s, [x](const Tensor& b) { return add_bias(x, b); }),
                    random_tensor(rng, Shape{c}, f64)};
  });
  family("matmul", [&] {
    const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 5), n = pick(rng, 1, 4);
    const Tensor b = random_tensor(rng, Shape{k, n}, f64);
    const Tensor a = random_tensor(rng, Shape{m, k}, f64);
    if (rng() & 1) {
      return GradCase{"", weighted(rng, Shape{m, n}, [b](const Tensor& x) { return matmul(x, b); }),
                      a};
    }
    return GradCase{"", weighted(rng, Shape{m, n}, [a](const Tensor& x) { return matmul(a, x); }),
                    b};
  });
  auto conv_case = [&](int which) {
    const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 3), o = pick(rng, 1, 3);
    const std::size_t h = pick(rng, 3, 6), k = pick(rng, 1, 3);
    const std::size_t stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
    const Tensor x = random_tensor(rng, Shape{n, c, h, h}, f64);
    const Tensor w = random_tensor(rng, Shape{o, c, k, k}, f64);
    const Tensor b = random_tensor(rng, Shape{o}, f64);
    const std::size_t oh = (h + 2 * pad - k) / stride + 1;
    const Shape out{n, o, oh, oh};
    if (which == 0) {
      return GradCase{"", weighted(rng, out, [=](const Tensor& v) {
                        return conv2d(v, w, b, stride, pad);
                      }), x};
    }
    if (which == 1) {
      return GradCase{"", weighted(rng, out, [=](const Tensor& v) {
                        return conv2d(x, v, b, stride, pad);
                      }), w};
    }
    return GradCase{"", weighted(rng, out, [=](const Tensor& v) {
                      return conv2d(x, w, v, stride, pad);
                    }), b};
  };
  family("conv2d.input", [&] { return conv_case(0); });
  family("conv2d.kernel", [&] { return conv_case(1); });
  family("conv2d.bias", [&] { return conv_case(2); });
  family("relu", [&] {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 6)};
    return GradCase{"", weighted(rng, s, [](const Tensor& x) { return relu(x); }),
                    detail::away_from_zero(rng, s)};
  });
  family("global_avg_pool", [&] {
    const std::size_t n = pick(rng, 1, 3), c = pick(rng, 1, 3);
    const Shape s{n, c, pick(rng, 1, 4), pick(rng, 1, 4)};
    return GradCase{"", weighted(rng, Shape{n, c}, [](const Tensor& x) {
                      return global_avg_pool(x);
                    }), random_tensor(rng, s, f64)};
  });
  family("max_pool2d", [&] {
    const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 2), oh = pick(rng, 1, 3);
    const Shape s{n, c, 2 * oh, 2 * oh};
    return GradCase{"", weighted(rng, Shape{n, c, oh, oh}, [](const Tensor& x) {
                      return max_pool2d(x, 2, 2);
                    }), detail::distinct_values(rng, s)};
  });
  family("reshape", [&] {
    const std::size_t a = pick(rng, 1, 4), b = pick(rng, 1, 4);
    return GradCase{"", weighted(rng, Shape{b, a}, [=](const Tensor& x) {
                      return reshape(x, Shape{b, a});
                    }), random_tensor(rng, Shape{a, b}, f64)};
  });
  family("log_softmax", [&] {
    const Shape s{pick(rng, 1, 4), pick(rng, 2, 6)};
    const std::size_t axis = pick(rng, 0, 1);
    return GradCase{"", weighted(rng, s, [axis](const Tensor& x) {
                      return log_softmax(x, axis);
                    }), random_tensor(rng, s, f64, 2.0)};
  });
  family("gather_rows", [&] {
    const std::size_t r = pick(rng, 1, 5), c = pick(rng, 2, 6);
    const auto cols = detail::random_labels(rng, r, c);
    return GradCase{"", weighted(rng, Shape{r}, [cols](const Tensor& x) {
                      return gather_rows(x, cols);
                    }), random_tensor(rng, Shape{r, c}, f64)};
  });
  family("index_rows", [&] {
    const std::size_t r = pick(rng, 1, 5), c = pick(rng, 1, 4), k = pick(rng, 1, 6);
    const auto rows = detail::random_labels(rng, k, r);
    return GradCase{"", weighted(rng, Shape{k, c}, [rows](const Tensor& x) {
                      return index_rows(x, rows);
                    }), random_tensor(rng, Shape{r, c}, f64)};
  });
  family("reduce_mean", [&] {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
    return GradCase{"", [](const Tensor& x) { return reduce_mean(mul(x, x)); },
                    random_tensor(rng, s, f64)};
  });
  family("reduce_sum", [&] {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
    return GradCase{"", [](const Tensor& x) { return reduce_sum(mul(x, x)); },
                    random_tensor(rng, s, f64)};
  });
  family("kl_div", [&] {
    const Shape s{pick(rng, 1, 4), pick(rng, 2, 6)};
    const Tensor t = log_softmax(random_tensor(rng, s, f64, 2.0), 1);
    return GradCase{"", [t](const Tensor& x) { return kl_div(t, x); },
                    log_softmax(random_tensor(rng, s, f64, 2.0), 1)};
  });

  // Losses.
  family("cross_entropy", [&] {
    const std::size_t b = pick(rng, 1, 6), c = pick(rng, 2, 10);
    const auto y = detail::random_labels(rng, b, c);
    const double tau = std::uniform_real_distribution<double>(0.5, 4.0)(rng);
    return GradCase{"", [y, tau](const Tensor& x) { return cross_entropy(x, y, tau); },
                    random_tensor(rng, Shape{b, c}, f64, 2.0)};
  });
  family("kd_kl_loss", [&] {
    const std::size_t b = pick(rng, 1, 6), c = pick(rng, 2, 10);
    const Tensor t = random_tensor(rng, Shape{b, c}, f64, 2.0);
    const double tau = std::uniform_real_distribution<double>(0.5, 4.0)(rng);
    return GradCase{"", [t, tau](const Tensor& x) { return kd_kl_loss(t, x, tau); },
                    random_tensor(rng, Shape{b, c}, f64, 2.0)};
  });
  family("ce_sad", [&] {
    const std::size_t rows = pick(rng, 1, 3) * 4, c = pick(rng, 2, 4) * 4;
    const std::size_t stages = pick(rng, 1, 3);
    const auto y = detail::random_labels(rng, rows, c);
    std::vector<Tensor> others;
    for (std::size_t l = 1; l < stages; ++l) others.push_back(random_tensor(rng, Shape{rows, c}, f64));
    return GradCase{"", [y, others, stages](const Tensor& x) {
                      std::vector<Tensor> aux{x};
                      aux.insert(aux.end(), others.begin(), others.end());
                      return ce_sad(aux, y, 1.0, stages);
                    }, random_tensor(rng, Shape{rows, c}, f64, 2.0)};
  });
  family("loss_kl_q", [&] {
    const std::size_t rows = pick(rng, 1, 3) * 4, c = pick(rng, 2, 4) * 4;
    const std::size_t stages = pick(rng, 1, 3);
    std::vector<Tensor> teacher, others;
    for (std::size_t l = 0; l < stages; ++l) teacher.push_back(random_tensor(rng, Shape{rows, c}, f64, 2.0));
    for (std::size_t l = 1; l < stages; ++l) others.push_back(random_tensor(rng, Shape{rows, c}, f64, 2.0));
    const std::size_t slot = pick(rng, 0, stages - 1);
    return GradCase{"", [teacher, others, slot](const Tensor& x) {
                      std::vector<Tensor> student = others;
                      student.insert(student.begin() + static_cast<long>(slot), x);
                      return loss_kl_q(teacher, student, 3.0);
                    }, random_tensor(rng, Shape{rows, c}, f64, 2.0)};
  });
  family("loss_kl_p", [&] {
    const std::size_t rows = pick(rng, 1, 3) * 4, c = pick(rng, 2, 8);
    const Tensor t = random_tensor(rng, Shape{rows, c}, f64, 2.0);
    return GradCase{"", [t](const Tensor& x) { return loss_kl_p(t, x, 3.0); },
                    random_tensor(rng, Shape{rows, c}, f64, 2.0)};
  });
  // Full student objective with a shared upstream leaf feeding every term.
  family("student_total", [&] {
    const std::size_t samples = pick(rng, 1, 3), m = 4, n = pick(rng, 2, 4);
    const std::size_t rows = samples * m, d = pick(rng, 2, 4);
    const Tensor wc = random_tensor(rng, Shape{d, n}, f64);
    const Tensor wq = random_tensor(rng, Shape{d, n * m}, f64);
    const Tensor tq = random_tensor(rng, Shape{rows, n * m}, f64, 2.0);
    const Tensor tp = random_tensor(rng, Shape{rows, n}, f64, 2.0);
    std::vector<std::size_t> normal(samples), y(samples);
    for (std::size_t i = 0; i < samples; ++i) {
      normal[i] = i * m;
      y[i] = pick(rng, 0, n - 1);
    }
    return GradCase{"", [=](const Tensor& feat) {
                      const Tensor logits = matmul(feat, wc);
                      const Tensor aux = matmul(relu(feat), wq);
                      LossParts parts;
                      parts.task = cross_entropy(index_rows(logits, normal), y, 1.0);
                      const std::vector<Tensor> t{tq}, s{aux};
                      parts.kl_q = loss_kl_q(t, s, 3.0);
                      parts.kl_p = loss_kl_p(tp, logits, 3.0);
                      return compose_student_loss(parts, hsakd_flags()).total;
                    }, detail::away_from_zero(rng, Shape{rows, d})};
  });
  return fams;
}

/// Runs every family and reports the worst relative error per family.
inline std::vector<GradFamilyResult> run_grad_suite(std::size_t instances, std::uint64_t seed,
                                                    double tol, double step = 1e-4) {
  std::vector<GradFamilyResult> out;
  for (const auto& fam : grad_families(instances, seed)) {
    GradFamilyResult r;
    r.name = fam.front().name;
    for (const GradCase& c : fam) {
      const GradCheckReport rep = gradient_check(c.f, c.point, step, tol);
      r.max_rel_error = std::max(r.max_rel_error, rep.max_rel_error);
      r.passed = r.passed && rep.passed;
      ++r.instances;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace hsakd::testing
