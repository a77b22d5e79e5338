// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>
#include <set>

#include "hsakd/model.hpp"
#include "hsakd/ops.hpp"
#include "test_support.hpp"

namespace hsakd {
namespace {

ModelSpec spec3(std::size_t n = 8, std::size_t m = 4) {
  ModelSpec s;
  s.stages = {{1, 4, false}, {2, 6, true}, {1, 8, true}};
  s.classes = n;
  s.transforms = m;
  return s;
}

std::size_t count(const std::vector<Parameter>& ps) {
  std::size_t n = 0;
  for (const auto& p : ps) n += p.tensor.numel();
  return n;
}

// Closed form: each block is out*in*9 + out; the head is d*K + K.
std::size_t oracle_aux_count(const ModelSpec& s, std::size_t l) {
  std::size_t in = s.stages[l].channels, total = 0;
  for (std::size_t t = l + 1; t < s.stages.size(); ++t) {
    for (std::size_t b = 0; b < s.stages[t].blocks; ++b) {
      total += s.stages[t].channels * in * 9 + s.stages[t].channels;
      in = s.stages[t].channels;
    }
  }
  const std::size_t k = s.classes * s.transforms;
  return total + in * k + k;
}

Tensor random_batch(std::mt19937_64& rng, std::size_t b, std::size_t side, std::size_t c = 1) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(b * c * side * side);
  for (double& x : v) x = u(rng);
  return Tensor::from_values(Shape{b, c, side, side}, v);
}

void randomize(std::vector<Parameter> ps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  for (auto& p : ps)
    for (std::size_t i = 0; i < p.tensor.numel(); ++i) p.tensor.mutable_storage().set(i, d(rng));
}

TEST(Model, ConstructionShapes) {
  const StagedModel m = build_model(spec3(), 1);
  ASSERT_EQ(m.stage_count(), 3u);
  ASSERT_EQ(m.aux().size(), 3u);
  EXPECT_EQ(m.aux()[0].tail.size(), 2u);
  EXPECT_EQ(m.aux()[1].tail.size(), 1u);
  EXPECT_EQ(m.aux()[2].tail.size(), 0u);
  for (const auto& a : m.aux()) EXPECT_EQ(a.head.bias.tensor.numel(), 32u);
  EXPECT_EQ(m.embedding_dim(), 8u);
  EXPECT_THROW(build_model(ModelSpec{}, 1), ContractError);
}

TEST(Model, ParameterNamesUniqueAndSorted) {
  const StagedModel m = build_model(spec3(), 1);
  const auto ps = m.parameters();
  std::set<std::string> names;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    names.insert(ps[i].name);
    if (i) EXPECT_LT(ps[i - 1].name, ps[i].name);
  }
  EXPECT_EQ(names.size(), ps.size());
  EXPECT_TRUE(m.find("backbone.stage2.conv1.weight").has_value());
  EXPECT_TRUE(m.find("head.weight").has_value());
  EXPECT_FALSE(m.find("nope").has_value());
  EXPECT_EQ(count(m.backbone_parameters()) + count(m.aux_parameters()), count(ps));
}

TEST(Model, SeededInitIsDeterministic) {
  const auto a = build_model(spec3(), 7).parameters();
  const auto b = build_model(spec3(), 7).parameters();
  const auto c = build_model(spec3(), 8).parameters();
  ASSERT_EQ(a.size(), b.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a[i].tensor.storage() == b[i].tensor.storage()) << a[i].name;
    any_diff = any_diff || !(a[i].tensor.storage() == c[i].tensor.storage());
  }
  EXPECT_TRUE(any_diff);
}

TEST(Model, AuxParameterCountsMatchOracle) {
  ModelSpec s = spec3();
  s.stages = default_stages();
  const StagedModel m = build_model(s, 1);
  std::size_t prev = SIZE_MAX;
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t n = count(m.aux_parameters(l));
    EXPECT_EQ(n, oracle_aux_count(s, l));
    EXPECT_LT(n, prev);
    prev = n;
  }
  EXPECT_EQ(stage_parameter_count(s.stages, 1),
            count(m.backbone_parameters()) - (64 * 8 + 8));
}

TEST(Model, TapSpatialSizes) {
  ModelSpec s = spec3();
  std::mt19937_64 rng(1);
  const StagedModel m = build_model(s, 1);
  const TapOutput out = forward_taps(m, random_batch(rng, 2, 32));
  ASSERT_EQ(out.taps.size(), 3u);
  EXPECT_EQ(out.taps[0].shape(), (Shape{2, 4, 32, 32}));
  EXPECT_EQ(out.taps[1].shape(), (Shape{2, 6, 16, 16}));
  EXPECT_EQ(out.taps[2].shape(), (Shape{2, 8, 8, 8}));
  EXPECT_EQ(out.class_logits.shape(), (Shape{2, 8}));
  EXPECT_EQ(out.embedding.shape(), (Shape{2, 8}));
  EXPECT_THROW(forward_taps(m, random_batch(rng, 1, 16, 3)), DimensionError);
  EXPECT_THROW(forward_taps(m, random_batch(rng, 1, 10)), DimensionError);
}

TEST(Model, ZeroInputGivesZeroLogits) {
  const StagedModel m = build_model(spec3(), 3);
  const TapOutput out = forward_taps(m, Tensor::zeros(Shape{2, 1, 16, 16}));
  for (double v : out.class_logits.to_vector()) EXPECT_EQ(v, 0.0);
  const auto aux = aux_forward(m, out.taps);
  ASSERT_EQ(aux.size(), 3u);
  for (const auto& a : aux) {
    EXPECT_EQ(a.shape(), (Shape{2, 32}));
    for (double v : a.to_vector()) EXPECT_EQ(v, 0.0);
  }
  const std::vector<Tensor> two(out.taps.begin(), out.taps.begin() + 2);
  EXPECT_THROW(aux_forward(m, two), ContractError);
}

TEST(Model, InferencePurity) {
  std::mt19937_64 rng(4);
  const Tensor x = random_batch(rng, 3, 16);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    StagedModel m = build_model(spec3(), seed);
    const Storage before = forward_taps(m, x).class_logits.storage();
    randomize(m.aux_parameters(), seed * 31);
    EXPECT_TRUE(before == forward_taps(m, x).class_logits.storage());
  }
}

TEST(Model, AuxOutputsAreIndependent) {
  std::mt19937_64 rng(5);
  StagedModel m = build_model(spec3(), 2);
  const TapOutput out = forward_taps(m, random_batch(rng, 2, 16));
  const auto before = aux_forward(m, out.taps);
  randomize(m.aux_parameters(1), 99);
  const auto after = aux_forward(m, out.taps);
  EXPECT_TRUE(before[0].storage() == after[0].storage());
  EXPECT_FALSE(before[1].storage() == after[1].storage());
  EXPECT_TRUE(before[2].storage() == after[2].storage());
}

TEST(Model, PermutationEquivariance) {
  std::mt19937_64 rng(6);
  const StagedModel m = build_model(spec3(), 2);
  const Tensor x = random_batch(rng, 4, 16);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  const auto a = forward_taps(m, x).class_logits;
  const auto b = forward_taps(m, index_rows(x, perm)).class_logits;
  const auto pa = index_rows(a, perm).to_vector();
  const auto bv = b.to_vector();
  for (std::size_t i = 0; i < bv.size(); ++i) EXPECT_NEAR(pa[i], bv[i], 1e-5);
}

TEST(Model, AuxTailMatchesBackboneShape) {
  std::mt19937_64 rng(7);
  const StagedModel m = build_model(spec3(), 2);
  const TapOutput out = forward_taps(m, random_batch(rng, 2, 16));
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_EQ(run_aux_tail(m, l, out.taps[l]).shape(),
              run_backbone_stages(m, l + 1, out.taps[l]).shape());
  }
}

TEST(Model, DetachedTapsStopBackboneGradient) {
  std::mt19937_64 rng(8);
  StagedModel m = build_model(spec3(), 2);
  const TapOutput out = forward_taps(m, random_batch(rng, 2, 16));
  auto aux = aux_forward(m, out.taps, true);
  backward(reduce_sum(aux[0]));
  for (const auto& p : m.backbone_parameters()) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
  for (const auto& p : m.aux_parameters(0)) EXPECT_TRUE(p.tensor.has_grad()) << p.name;

  const TapOutput out2 = forward_taps(m, random_batch(rng, 2, 16));
  backward(reduce_sum(aux_forward(m, out2.taps)[0]));
  EXPECT_TRUE(m.find("backbone.stage1.conv1.weight")->tensor.has_grad());
}

TEST(Model, StageStrings) {
  const auto st = parse_stages("16:2:0,32:2:1,64:2:1");
  EXPECT_EQ(st, default_stages());
  EXPECT_EQ(format_stages(st), "16:2:0,32:2:1,64:2:1");
  EXPECT_EQ(halved(st)[2].channels, 32u);
  EXPECT_THROW(parse_stages("16:2"), ConfigError);
  EXPECT_THROW(parse_stages("16:0:0"), ConfigError);
  EXPECT_THROW(parse_stages(""), ConfigError);
}

}  // namespace
}  // namespace hsakd
