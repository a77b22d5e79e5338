// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "grad_suite.hpp"
#include "hsakd/grad_check.hpp"
#include "hsakd/ops.hpp"

namespace hsakd {
namespace {

TEST(GradCheck, SumOfSquares) {
  const Tensor p = Tensor::from_values(Shape{3}, std::vector<double>{1, 2, 3}, DType::f64);
  const auto rep = gradient_check([](const Tensor& x) { return reduce_sum(mul(x, x)); }, p,
                                  1e-4, 1e-6);
  EXPECT_TRUE(rep.passed);
  EXPECT_LE(rep.max_rel_error, 1e-6);
  ASSERT_EQ(rep.analytic.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(rep.analytic[i], 2.0 * (i + 1));
}

TEST(GradCheck, ConstantFunctionHasZeroGradient) {
  const Tensor p = Tensor::from_values(Shape{2}, std::vector<double>{0.3, -7}, DType::f64);
  const Tensor c = Tensor::scalar(4.0, DType::f64);
  const auto rep = gradient_check([c](const Tensor&) { return c; }, p, 1e-4, 0.0);
  EXPECT_TRUE(rep.passed);
  EXPECT_EQ(rep.analytic, (std::vector<double>{0, 0}));
}

TEST(GradCheck, CrossEntropyOnFiveClasses) {
  std::mt19937_64 rng(2);
  const Tensor p = testing::random_tensor(rng, Shape{4, 5}, DType::f64, 2.0);
  const std::vector<std::size_t> y{0, 3, 4, 1};
  const auto rep = gradient_check(
      [&](const Tensor& x) { return reduce_mean(mul_scalar(gather_rows(log_softmax(x, 1), y), -1.0)); },
      p, 1e-4, 1e-5);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(GradCheck, DetectsWrongGradient) {
  // detach() cuts the tape, so the analytic gradient misses a term.
  const Tensor p = Tensor::from_values(Shape{2}, std::vector<double>{1.5, -0.5}, DType::f64);
  const auto rep = gradient_check(
      [](const Tensor& x) { return reduce_sum(mul(x, x.detach())); }, p, 1e-4, 1e-5);
  EXPECT_FALSE(rep.passed);
  EXPECT_NEAR(rep.max_rel_error, 0.5, 1e-6);
}

TEST(GradCheck, RejectsNonFinitePointAndBadStep) {
  const Tensor p = Tensor::full(Shape{1}, 1e200, DType::f64);
  EXPECT_THROW(gradient_check([](const Tensor& x) { return reduce_sum(mul(x, x)); }, p, 1e-4, 1e-5),
               NumericError);
  EXPECT_THROW(gradient_check([](const Tensor& x) { return reduce_sum(x); }, p, 0.0, 1e-5),
               ContractError);
}

// Twenty random instances of every differentiable primitive and every loss.
TEST(GradCheck, EveryPrimitiveAndLoss) {
  for (const auto& r : testing::run_grad_suite(20, 1234, 1e-5)) {
    EXPECT_EQ(r.instances, 20u);
    EXPECT_TRUE(r.passed) << r.name << " max rel error " << r.max_rel_error;
  }
}

}  // namespace
}  // namespace hsakd
