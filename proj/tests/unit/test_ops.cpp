// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hsakd/ops.hpp"
#include "hsakd/parallel.hpp"
#include "test_support.hpp"

namespace hsakd {
namespace {

// Direct 7-deep loop convolution in double.
std::vector<double> naive_conv(const Tensor& x, const Tensor& k, const Tensor& bias,
                               std::size_t stride, std::size_t pad) {
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = k.dim(0), kk = k.dim(2);
  const std::size_t oh = (h + 2 * pad - kk) / stride + 1, ow = (w + 2 * pad - kk) / stride + 1;
  std::vector<double> out(b * o * oh * ow, 0.0);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t f = 0; f < o; ++f)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t z = 0; z < ow; ++z) {
          double acc = bias.defined() ? bias.at(f) : 0.0;
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < kk; ++i)
              for (std::size_t j = 0; j < kk; ++j) {
                const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                const long ix = static_cast<long>(z * stride + j) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w))
                  continue;
                acc += x.at(((n * c + ch) * h + iy) * w + ix) * k.at(((f * c + ch) * kk + i) * kk + j);
              }
          out[((n * o + f) * oh + y) * ow + z] = acc;
        }
  return out;
}

TEST(Conv2d, OnesKernelSumsWindow) {
  const Tensor x = Tensor::full(Shape{1, 1, 4, 4}, 1.0);
  const Tensor k = Tensor::full(Shape{1, 1, 3, 3}, 1.0);
  const Tensor y = conv2d(x, k, 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(y.to_vector(), (std::vector<double>{9, 9, 9, 9}));
}

TEST(Conv2d, MatchesNaiveLoops) {
  std::mt19937_64 rng(3);
  struct Case {
    std::size_t b, c, o, h, stride, pad;
  };
  for (const Case& cs : {Case{2, 3, 4, 7, 1, 1}, Case{3, 2, 5, 8, 2, 1}, Case{1, 4, 2, 6, 1, 0},
                         Case{2, 1, 3, 9, 3, 2}}) {
    const Tensor x = testing::random_tensor(rng, Shape{cs.b, cs.c, cs.h, cs.h});
    const Tensor k = testing::random_tensor(rng, Shape{cs.o, cs.c, 3, 3});
    const Tensor bias = testing::random_tensor(rng, Shape{cs.o});
    const auto ref = naive_conv(x, k, bias, cs.stride, cs.pad);
    const auto got = conv2d(x, k, bias, cs.stride, cs.pad).to_vector();
    ASSERT_EQ(ref.size(), got.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, ShapeErrorsNamePrimitive) {
  const Tensor x = Tensor::zeros(Shape{1, 2, 5, 5});
  const Tensor k = Tensor::zeros(Shape{3, 4, 3, 3});
  try {
    conv2d(x, k, 1, 1);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("conv2d"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("axis 1"), std::string::npos);
  }
}

TEST(Conv2d, WorkerCountDoesNotChangeResults) {
  std::mt19937_64 rng(9);
  const Tensor x = testing::random_tensor(rng, Shape{6, 3, 8, 8}, DType::f32);
  Tensor k = testing::random_tensor(rng, Shape{4, 3, 3, 3}, DType::f32);
  k.set_requires_grad(true);
  auto run = [&](std::size_t workers) {
    set_worker_count(workers);
    k.clear_grad();
    const Tensor y = conv2d(x, k, 2, 1);
    backward(reduce_sum(relu(y)));
    set_worker_count(0);
    return std::make_pair(y.storage(), k.grad());
  };
  const auto one = run(1);
  const auto four = run(4);
  EXPECT_TRUE(one.first == four.first);
  EXPECT_TRUE(one.second == four.second);
}

TEST(Pooling, GlobalAverage) {
  const Tensor x = Tensor::from_values(Shape{1, 2, 2, 2},
                                       std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  EXPECT_EQ(global_avg_pool(x).to_vector(), (std::vector<double>{2.5, 6.5}));
}

TEST(Pooling, MaxPoolTiesRouteToLowestIndex) {
  Tensor x = Tensor::from_values(Shape{1, 1, 2, 2}, std::vector<double>{5, 5, 5, 5}, DType::f64);
  x.set_requires_grad(true);
  const Tensor y = max_pool2d(x, 2, 2);
  EXPECT_EQ(y.to_vector(), (std::vector<double>{5}));
  backward(reduce_sum(y));
  EXPECT_EQ(x.grad_vector(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Pooling, MaxPoolPicksMaximum) {
  const Tensor x = Tensor::from_values(
      Shape{1, 1, 4, 4}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  EXPECT_EQ(max_pool2d(x, 2, 2).to_vector(), (std::vector<double>{6, 8, 14, 16}));
}

TEST(LogSoftmax, SymmetricPair) {
  const Tensor x = Tensor::from_values(Shape{2}, std::vector<double>{0, 0}, DType::f64);
  const auto y = log_softmax(x, 0).to_vector();
  EXPECT_NEAR(y[0], -std::log(2.0), 1e-15);
  EXPECT_NEAR(y[1], -std::log(2.0), 1e-15);
}

TEST(LogSoftmax, RowsExponentiateToOne) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = testing::random_tensor(rng, Shape{5, 7}, DType::f32, 10.0);
    const auto y = log_softmax(x, 1).to_vector();
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) s += std::exp(y[r * 7 + c]);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(LogSoftmax, StableForLargeLogits) {
  const Tensor x = Tensor::from_values(Shape{1, 2}, std::vector<double>{1000, -1000}, DType::f32);
  const auto y = log_softmax(x, 1).to_vector();
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], -2000.0);
}

TEST(Ops, MatmulAndBias) {
  const Tensor a = Tensor::from_values(Shape{2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor b = Tensor::from_values(Shape{2, 1}, std::vector<double>{1, 1});
  const Tensor bias = Tensor::from_values(Shape{1}, std::vector<double>{0.5});
  EXPECT_EQ(add_bias(matmul(a, b), bias).to_vector(), (std::vector<double>{3.5, 7.5}));
  EXPECT_THROW(matmul(b, b), DimensionError);
}

TEST(Ops, GatherAndIndexRows) {
  const Tensor x = Tensor::from_values(Shape{3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const std::vector<std::size_t> cols{1, 0, 1};
  EXPECT_EQ(gather_rows(x, cols).to_vector(), (std::vector<double>{2, 3, 6}));
  const std::vector<std::size_t> rows{2, 0};
  EXPECT_EQ(index_rows(x, rows).to_vector(), (std::vector<double>{5, 6, 1, 2}));
  const std::vector<std::size_t> bad{0, 2, 0};
  EXPECT_THROW(gather_rows(x, bad), ContractError);
}

TEST(Ops, ReshapeAndReductions) {
  const Tensor x = Tensor::from_values(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(reshape(x, Shape{3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW(reshape(x, Shape{4}), DimensionError);
  EXPECT_EQ(reduce_sum(x).item(), 21.0);
  EXPECT_EQ(reduce_mean(x).item(), 3.5);
}

TEST(Ops, ElementwiseShapeMismatch) {
  const Tensor a = Tensor::zeros(Shape{2, 3});
  const Tensor b = Tensor::zeros(Shape{3, 2});
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(add(a, Tensor::zeros(Shape{2, 3}, DType::f64)), ContractError);
}

TEST(Ops, KlDivOfIdenticalInputsIsExactlyZero) {
  std::mt19937_64 rng(4);
  const Tensor x = log_softmax(testing::random_tensor(rng, Shape{4, 6}), 1);
  EXPECT_EQ(kl_div(x, x).item(), 0.0);
}

TEST(Ops, KlDivStopsTeacherGradient) {
  std::mt19937_64 rng(6);
  Tensor t = testing::random_tensor(rng, Shape{3, 4});
  Tensor s = testing::random_tensor(rng, Shape{3, 4});
  t.set_requires_grad(true);
  s.set_requires_grad(true);
  backward(kl_div(log_softmax(t, 1), log_softmax(s, 1)));
  for (double g : t.has_grad() ? t.grad_vector() : std::vector<double>{}) EXPECT_EQ(g, 0.0);
  EXPECT_TRUE(s.has_grad());
}

TEST(ApplyPrimitive, DispatchesByKind) {
  const Tensor x = Tensor::full(Shape{1, 1, 4, 4}, 1.0);
  const Tensor k = Tensor::full(Shape{1, 1, 3, 3}, 1.0);
  PrimitiveAttrs attrs;
  attrs.stride = 1;
  attrs.padding = 0;
  const std::vector<Tensor> in{x, k};
  EXPECT_EQ(apply_primitive(Primitive::conv2d, in, attrs).to_vector(),
            (std::vector<double>{9, 9, 9, 9}));
  const std::vector<Tensor> one{x};
  EXPECT_EQ(apply_primitive(Primitive::reduce_sum, one).item(), 16.0);
  EXPECT_THROW(apply_primitive(Primitive::add, one), ContractError);
}

}  // namespace
}  // namespace hsakd
