#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <fusionrules/combiner.hpp>

#include "test_util.hpp"

using namespace fusionrules;

namespace {

ProbabilityVolume voxel(double v) { return ProbabilityVolume({1, 1, 1}, {1, 1, 1}, v); }

}  // namespace

TEST(CombineLinear, OneHotIsBitExact) {
  std::mt19937_64 rng(1);
  const auto a = testutil::random_probability(rng, {6, 5, 4}), b = testutil::random_probability(rng, {6, 5, 4}),
             c = testutil::random_probability(rng, {6, 5, 4});
  const auto z = combine_linear(stack_of(a, b, c), LinearRule{{1, 0, 0}});
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(z[i], a[i]);
}

TEST(CombineLinear, VoxelArithmetic) {
  const auto a = voxel(0.9), b = voxel(0.6), c = voxel(0.3);
  EXPECT_NEAR(combine_linear(stack_of(a, b, c), LinearRule{{1.0 / 3, 1.0 / 3, 1.0 / 3}})[0], 0.6, 1e-12);
  const auto d = voxel(1.0), e = voxel(0.5), f = voxel(0.0);
  EXPECT_NEAR(combine_linear(stack_of(d, e, f), LinearRule{{0.6, 0.2, 0.2}})[0], 0.7, 1e-12);
}

TEST(CombineLinear, LinearInAlpha) {
  std::mt19937_64 rng(2);
  const Dims d{4, 4, 4};
  const auto a = testutil::random_probability(rng, d), b = testutil::random_probability(rng, d),
             c = testutil::random_probability(rng, d);
  const auto s = stack_of(a, b, c);
  const LinearRule r1{{0.2, 0.5, 0.3}}, r2{{0.7, 0.1, 0.2}};
  const LinearRule mid{{0.45, 0.3, 0.25}};
  const auto z1 = combine_linear(s, r1), z2 = combine_linear(s, r2), zm = combine_linear(s, mid);
  for (std::size_t i = 0; i < zm.size(); ++i) EXPECT_NEAR(zm[i], 0.5 * z1[i] + 0.5 * z2[i], 1e-12);
  const auto raw = mix_voxels(s, {1, 1, 1});
  for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR(raw[i], a[i] + b[i] + c[i], 1e-15);
}

TEST(CombineLinear, NonSimplexRejected) {
  const auto a = voxel(0.5);
  EXPECT_THROW(combine_linear(stack_of(a, a, a), LinearRule{{0.5, 0.5, 0.5}}), InvalidArgument);
  EXPECT_THROW(combine_linear(stack_of(a, a, a), LinearRule{{1.5, -0.5, 0.0}}), InvalidArgument);
}

TEST(CombineLinear, MisalignedRejected) {
  const ProbabilityVolume a({2, 2, 2}, {1, 1, 1}, 0.5), b({2, 2, 3}, {1, 1, 1}, 0.5);
  EXPECT_THROW(combine_linear(stack_of(a, a, b), LinearRule{{1, 0, 0}}), AlignmentError);
}

TEST(CombineStacking, VoxelValues) {
  const auto h = voxel(0.5), one = voxel(1.0), x = voxel(0.123);
  EXPECT_DOUBLE_EQ(combine_stacking(stack_of(x, x, x), StackingRule{{0, 0, 0, 0}})[0], 0.5);
  EXPECT_NEAR(combine_stacking(stack_of(one, one, one), StackingRule{{18.17, 18.17, -0.20, -8.53}})[0], 1.0, 1e-10);
  EXPECT_DOUBLE_EQ(combine_stacking(stack_of(h, x, one), StackingRule{{4, 0, 0, -2}})[0], 0.5);
}

TEST(CombineStacking, MonotoneInEachInputForPositiveWeights) {
  const auto lo = voxel(0.2), hi = voxel(0.8), m = voxel(0.5);
  const StackingRule r{{3, 2, 1, -3}};
  for (int t = 0; t < 3; ++t) {
    ModalityStack s_lo{&m, &m, &m}, s_hi{&m, &m, &m};
    s_lo[t] = &lo;
    s_hi[t] = &hi;
    EXPECT_LT(combine_stacking(s_lo, r)[0], combine_stacking(s_hi, r)[0]);
  }
}

TEST(CombineVote, Majority) {
  LabelVolume a({3, 1, 1}, {1, 1, 1}), b({3, 1, 1}, {1, 1, 1}), c({3, 1, 1}, {1, 1, 1});
  a.set(0, 0, 0, true);
  b.set(0, 0, 0, true);  // voxel 0: (1,1,0)
  c.set(1, 0, 0, true);  // voxel 1: (0,0,1)
  a.set(2, 0, 0, true);
  b.set(2, 0, 0, true);
  c.set(2, 0, 0, true);  // voxel 2: unanimous
  const auto v = combine_vote(a, b, c);
  EXPECT_EQ(v[0], 1);
  EXPECT_EQ(v[1], 0);
  EXPECT_EQ(v[2], 1);
  EXPECT_EQ(combine_vote(a, a, a), a);
}

TEST(Binarize, UniformBelowThresholdIsEmpty) {
  EXPECT_TRUE(binarize(ProbabilityVolume({8, 8, 8}, {1, 1, 1}, 0.4)).empty());
}

TEST(Binarize, MinimumRegionBoundary) {
  std::vector<double> v(10 * 10 * 10, 0.1);
  ProbabilityVolume base({10, 10, 10}, {1, 1, 1}, v);
  auto block = [&](int n) {
    auto w = v;
    for (int z = 0; z < n; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) w[std::size_t(x + 10 * (y + 10 * z))] = 0.9;
    return ProbabilityVolume({10, 10, 10}, {1, 1, 1}, w);
  };
  EXPECT_EQ(binarize(block(3)).count(), 27);
  EXPECT_EQ(binarize(block(2)).count(), 0);
  BinarizeOptions keep_all;
  keep_all.min_region_voxels = 0;
  EXPECT_EQ(binarize(block(2), keep_all).count(), 8);
}

TEST(Binarize, StrictThreshold) {
  BinarizeOptions o;
  o.min_region_voxels = 1;
  EXPECT_TRUE(binarize(ProbabilityVolume({2, 2, 2}, {1, 1, 1}, 0.5), o).empty());
  o.threshold = 1.0;
  EXPECT_THROW(binarize(ProbabilityVolume({2, 2, 2}, {1, 1, 1}, 0.5), o), InvalidArgument);
}

TEST(EvalLoss, PerfectPrediction) {
  LabelVolume t({4, 4, 4}, {1, 1, 1});
  std::vector<double> p(64, 0.0);
  for (std::size_t i = 0; i < 64; i += 3) {
    t.set(i, true);
    p[i] = 1.0;
  }
  const auto l = eval_loss(ProbabilityVolume({4, 4, 4}, {1, 1, 1}, p), t);
  EXPECT_NEAR(l.cross_entropy, 0.0, 64 * 2e-7);
  EXPECT_DOUBLE_EQ(l.soft_dice, -1.0);
}

TEST(EvalLoss, UniformHalf) {
  LabelVolume t({4, 4, 2}, {1, 1, 1});
  for (std::size_t i = 0; i < 16; ++i) t.set(i, true);
  const auto l = eval_loss(ProbabilityVolume({4, 4, 2}, {1, 1, 1}, 0.5), t);
  EXPECT_NEAR(l.cross_entropy, 32 * std::log(0.5), 1e-12);
  EXPECT_NEAR(l.soft_dice, -2.0 * 8 / (16 + 16), 1e-12);
  EXPECT_NEAR(l.total(), l.cross_entropy + l.soft_dice, 1e-15);
}

TEST(EvalLoss, EmptyTruthTinyPrediction) {
  LabelVolume t({4, 4, 4}, {1, 1, 1});
  const auto l = eval_loss(ProbabilityVolume({4, 4, 4}, {1, 1, 1}, kLossEpsilon), t);
  EXPECT_NEAR(l.soft_dice, 0.0, 1e-12);
  EXPECT_NEAR(l.cross_entropy, 64 * std::log(1 - kLossEpsilon), 1e-12);
}
