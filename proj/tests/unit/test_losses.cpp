// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hsakd/losses.hpp"
#include "hsakd/ops.hpp"
#include "test_support.hpp"

namespace hsakd {
namespace {

using testing::Matrix;
using testing::to_tensor;

std::vector<std::size_t> labels(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = std::uniform_int_distribution<std::size_t>(0, k - 1)(rng);
  return y;
}

Tensor row(std::vector<double> v) { return Tensor::from_values(Shape{1, v.size()}, v, DType::f64); }

TEST(CrossEntropy, Examples) {
  const std::vector<std::size_t> y0{0};
  EXPECT_NEAR(cross_entropy(row({0, 0}), y0, 1.0).item(), std::log(2.0), 1e-15);
  const long double ref = testing::ref_cross_entropy({{10, -10}}, {0}, 1.0);
  EXPECT_NEAR(cross_entropy(row({10, -10}), y0, 1.0).item(), static_cast<double>(ref), 1e-9 * static_cast<double>(ref));
  EXPECT_NEAR(static_cast<double>(ref), 2.06e-9, 0.01e-9);
  EXPECT_DOUBLE_EQ(cross_entropy(row({2, 0}), y0, 2.0).item(),
                   cross_entropy(row({1, 0}), y0, 1.0).item());
  const std::vector<std::size_t> bad{2};
  EXPECT_THROW(cross_entropy(row({0, 0}), bad, 1.0), ContractError);
}

TEST(KdKl, Examples) {
  const Tensor t = row({1, 0}), s = row({0, 1});
  const double ref = static_cast<double>(testing::ref_kd({{1, 0}}, {{0, 1}}, 1.0));
  EXPECT_NEAR(kd_kl_loss(t, s, 1.0).item(), ref, 1e-12);
  EXPECT_NEAR(ref, 0.46212, 1e-5);
  EXPECT_EQ(kd_kl_loss(t, t, 1.0).item(), 0.0);
  // tau^2 times KL of the tempered distributions.
  const Tensor lt = log_softmax(mul_scalar(t, 1.0 / 3.0), 1);
  const Tensor ls = log_softmax(mul_scalar(s, 1.0 / 3.0), 1);
  EXPECT_NEAR(kd_kl_loss(t, s, 3.0).item(), 9.0 * kl_div(lt, ls).item(), 1e-12);
  EXPECT_THROW(kd_kl_loss(t, row({0, 1, 2}), 1.0), Error);
}

TEST(KdKl, ZeroExactlyForShiftedRows) {
  std::mt19937_64 rng(1);
  const Matrix t = testing::random_matrix(rng, 4, 6);
  Matrix shifted = t;
  for (auto& r : shifted) {
    const double c = std::normal_distribution<double>(0, 5)(rng);
    for (double& v : r) v += c;
  }
  EXPECT_NEAR(kd_kl_loss(to_tensor(t), to_tensor(shifted), 2.0).item(), 0.0, 1e-12);
  Matrix other = t;
  other[2][3] += 0.5;
  EXPECT_GT(kd_kl_loss(to_tensor(t), to_tensor(other), 2.0).item(), 1e-6);
}

TEST(Losses, ShiftInvariance) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t rows = 8, k = 12;
    const Matrix a = testing::random_matrix(rng, rows, k), b = testing::random_matrix(rng, rows, k);
    Matrix as = a, bs = b;
    for (std::size_t r = 0; r < rows; ++r) {
      const double c = std::normal_distribution<double>(0, 10)(rng);
      for (double& v : as[r]) v += c;
      for (double& v : bs[r]) v -= c;
    }
    const auto y = labels(rng, rows, k);
    EXPECT_NEAR(cross_entropy(to_tensor(a), y, 1.0).item(), cross_entropy(to_tensor(as), y, 1.0).item(), 1e-7);
    EXPECT_NEAR(kd_kl_loss(to_tensor(a), to_tensor(b), 3.0).item(),
                kd_kl_loss(to_tensor(as), to_tensor(bs), 3.0).item(), 1e-7);
    const std::vector<Tensor> ta{to_tensor(a)}, tb{to_tensor(b)}, tas{to_tensor(as)}, tbs{to_tensor(bs)};
    EXPECT_NEAR(loss_kl_q(ta, tb, 3.0).item(), loss_kl_q(tas, tbs, 3.0).item(), 1e-7);
    EXPECT_NEAR(ce_sad(ta, y, 1.0, 1).item(), ce_sad(tas, y, 1.0, 1).item(), 1e-7);
  }
}

TEST(Losses, TeacherReceivesNoGradient) {
  std::mt19937_64 rng(3);
  Tensor t = to_tensor(testing::random_matrix(rng, 8, 12));
  Tensor s = to_tensor(testing::random_matrix(rng, 8, 12));
  t.set_requires_grad(true);
  s.set_requires_grad(true);
  const std::vector<Tensor> tv{t}, sv{s};
  backward(add(add(kd_kl_loss(t, s, 3.0), loss_kl_p(t, s, 3.0)), loss_kl_q(tv, sv, 3.0)));
  if (t.has_grad()) {
    for (double g : t.grad_vector()) EXPECT_EQ(g, 0.0);
  }
  ASSERT_TRUE(s.has_grad());
}

TEST(CeSad, DegenerateAndUniform) {
  std::mt19937_64 rng(4);
  const Matrix q = testing::random_matrix(rng, 5, 7);
  const auto y = labels(rng, 5, 7);
  const std::vector<Tensor> one{to_tensor(q)};
  EXPECT_DOUBLE_EQ(ce_sad(one, y, 1.0, 1).item(), cross_entropy(to_tensor(q), y, 1.0).item());

  const std::size_t n = 5, m = 4, rows = 3 * m;
  const std::vector<Tensor> uni(3, Tensor::zeros(Shape{rows, n * m}, DType::f64));
  EXPECT_NEAR(ce_sad(uni, labels(rng, rows, n * m), 1.0, 3).item(), 3.0 * std::log(20.0), 1e-12);
  EXPECT_THROW(ce_sad(uni, labels(rng, rows, n * m), 1.0, 2), ContractError);
}

TEST(KlQ, DegenerateCases) {
  std::mt19937_64 rng(5);
  const Matrix t = testing::random_matrix(rng, 6, 4), s = testing::random_matrix(rng, 6, 4);
  const std::vector<Tensor> tv{to_tensor(t)}, sv{to_tensor(s)};
  EXPECT_DOUBLE_EQ(loss_kl_q(tv, sv, 3.0).item(), kd_kl_loss(tv[0], sv[0], 3.0).item());
  EXPECT_EQ(loss_kl_q(tv, tv, 3.0).item(), 0.0);
  EXPECT_DOUBLE_EQ(loss_kl_p(tv[0], sv[0], 3.0).item(), kd_kl_loss(tv[0], sv[0], 3.0).item());
  const std::vector<Tensor> two{tv[0], tv[0]};
  EXPECT_THROW(loss_kl_q(two, sv, 3.0), ContractError);
  const bool mask[] = {false, true};
  const std::vector<Tensor> stwo{sv[0], tv[0]};
  EXPECT_EQ(loss_kl_q(two, stwo, 3.0, mask).item(), 0.0);
}

// 100 random cases per loss against the long-double loop references.
TEST(Losses, MatchLoopOracles) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 6, m = 1 + rng() % 4, b = 1 + rng() % 5, stages = 1 + rng() % 3;
    const std::size_t rows = b * m, k = n * m;
    const double tau = 0.5 + (rng() % 100) / 25.0;
    std::vector<Matrix> tq, sq;
    std::vector<Tensor> tqt, sqt;
    for (std::size_t l = 0; l < stages; ++l) {
      tq.push_back(testing::random_matrix(rng, rows, k, 3.0));
      sq.push_back(testing::random_matrix(rng, rows, k, 3.0));
      tqt.push_back(to_tensor(tq.back()));
      sqt.push_back(to_tensor(sq.back()));
    }
    const auto jl = labels(rng, rows, k);
    const Matrix tp = testing::random_matrix(rng, rows, n, 3.0), sp = testing::random_matrix(rng, rows, n, 3.0);
    const auto yl = labels(rng, rows, n);

    EXPECT_NEAR(cross_entropy(to_tensor(sp), yl, tau).item(),
                static_cast<double>(testing::ref_cross_entropy(sp, yl, tau)), 1e-6);
    EXPECT_NEAR(kd_kl_loss(to_tensor(tp), to_tensor(sp), tau).item(),
                static_cast<double>(testing::ref_kd(tp, sp, tau)), 1e-6);
    EXPECT_NEAR(ce_sad(sqt, jl, tau, stages).item(),
                static_cast<double>(testing::ref_ce_sad(sq, jl, b, m, tau)), 1e-6);
    EXPECT_NEAR(loss_kl_q(tqt, sqt, tau).item(),
                static_cast<double>(testing::ref_kl_q(tq, sq, b, m, tau)), 1e-6);
    EXPECT_NEAR(loss_kl_p(to_tensor(tp), to_tensor(sp), tau).item(),
                static_cast<double>(testing::ref_kl_p(tp, sp, b, m, tau)), 1e-6);
  }
}

TEST(Compose, SumsEnabledTerms) {
  std::mt19937_64 rng(7);
  const Tensor a = to_tensor(testing::random_matrix(rng, 4, 5));
  const Tensor b = to_tensor(testing::random_matrix(rng, 4, 5));
  const std::vector<std::size_t> y{0, 1, 2, 3};
  const std::vector<Tensor> av{a}, bv{b};
  LossParts parts;
  parts.task = cross_entropy(b, y, 1.0);
  parts.kl_q = loss_kl_q(av, bv, 3.0);
  parts.kl_p = loss_kl_p(a, b, 3.0);
  parts.ce_sad = ce_sad(bv, y, 1.0, 1);

  LossFlags task_only;
  EXPECT_EQ(compose_student_loss(parts, task_only).total.item(), parts.task->item());

  const LossBundle full = compose_student_loss(parts, hsakd_flags());
  EXPECT_DOUBLE_EQ(full.total.item(), parts.task->item() + parts.kl_q->item() + parts.kl_p->item());
  EXPECT_FALSE(full.kd.defined());
  EXPECT_EQ(loss_value(full.kd), 0.0);

  LossFlags with_sad = hsakd_flags();
  with_sad.ce_sad = true;
  const double sad = static_cast<double>(
      testing::ref_cross_entropy([&] {
        Matrix m(4, std::vector<double>(5));
        const auto v = b.to_vector();
        for (std::size_t i = 0; i < 20; ++i) m[i / 5][i % 5] = v[i];
        return m;
      }(), y, 1.0));
  EXPECT_NEAR(compose_student_loss(parts, with_sad).total.item(), full.total.item() + sad, 1e-12);

  LossFlags kd = task_only;
  kd.kd = true;
  EXPECT_THROW(compose_student_loss(parts, kd), ContractError);
}

TEST(Flags, ParseAndFormat) {
  EXPECT_EQ(parse_loss_flags("task,kl_q,kl_p", 3), hsakd_flags());
  EXPECT_EQ(format_loss_flags(hsakd_flags()), "task,kl_q,kl_p");
  const LossFlags sub = parse_loss_flags("task,kl_q@2+3", 3);
  EXPECT_FALSE(sub.kl_q_stage(0));
  EXPECT_TRUE(sub.kl_q_stage(1));
  EXPECT_TRUE(sub.kl_q_stage(2));
  EXPECT_EQ(parse_loss_flags(format_loss_flags(sub), 3), sub);
  EXPECT_THROW(parse_loss_flags("task,kl_q@4", 3), ConfigError);
  EXPECT_THROW(parse_loss_flags("task,bogus", 3), ConfigError);
}

}  // namespace
}  // namespace hsakd
