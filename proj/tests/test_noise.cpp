#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "slowfast/harness.hpp"
#include "slowfast/noise.hpp"

using namespace slowfast;

namespace {

NoiseSpec scalar_noise(double sigma, double lambda = 0.0, double lo = 0.0, double hi = 0.0) {
  NoiseSpec s;
  s.sigma = Matrix::Constant(1, 1, sigma);
  s.jumps.intensity = lambda;
  s.jumps.size = UniformJumps{lo, hi};
  return s;
}

std::vector<double> row(const Matrix &M) { return {M.data(), M.data() + M.size()}; }

} // namespace

TEST(Rng, DerivedSeedsAreDistinctAndStable) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t p = 0; p < 100; ++p) {
    for (auto role : {StreamRole::SlowNoise, StreamRole::FastNoise, StreamRole::DeviationNoise}) {
      seen.insert(derive_seed(42, p, role));
    }
  }
  EXPECT_EQ(seen.size(), 300u);
  EXPECT_EQ(derive_seed(42, 7, StreamRole::FastNoise), derive_seed(42, 7, StreamRole::FastNoise));
  Rng a(42, 3, StreamRole::SlowNoise), b(42, 3, StreamRole::SlowNoise);
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(a.normal(), b.normal());
  }
}

TEST(Grid, UniformAndValidated) {
  const auto g = make_grid(0.0, 1.0, 0.25);
  ASSERT_EQ(g.size(), 5u);
  EXPECT_DOUBLE_EQ(g.back(), 1.0);
  EXPECT_EQ(make_grid(0.0, 0.0, 0.1).size(), 1u);
  const auto short_last = make_grid(0.0, 1.0, 0.3);
  ASSERT_EQ(short_last.size(), 5u);
  EXPECT_DOUBLE_EQ(short_last.back(), 1.0);
  EXPECT_NEAR(short_last[3], 0.9, 1e-15);
  EXPECT_THROW((void)make_grid(0.0, 1.0, 0.0), InvalidArgument);
  EXPECT_THROW((void)make_grid(1.0, 0.0, 0.1), InvalidArgument);
  EXPECT_THROW(detail::check_grid({}), InvalidArgument);
  EXPECT_THROW(detail::check_grid({0.0, 0.0}), InvalidArgument);
}

TEST(Increments, SilentSpecGivesZeros) {
  Rng rng(1);
  const auto s = sample_increments(scalar_noise(0.0), make_grid(0.0, 1.0, 0.01), rng);
  EXPECT_TRUE(s.dW.isZero(0.0));
  EXPECT_TRUE(s.dJ.isZero(0.0));
}

TEST(Increments, BrownianVariance) {
  Rng rng(2);
  const auto s = sample_increments(scalar_noise(1.0), make_grid(0.0, 1000.0, 0.01), rng);
  const SampleStats st = summarize(row(s.dW));
  EXPECT_EQ(st.n, 100000u);
  EXPECT_NEAR(st.variance, 0.01, 3.0 * st.se_variance);
  EXPECT_NEAR(st.mean, 0.0, 3.0 * st.se_mean);
}

TEST(Increments, CompensatedJumpsHaveMeanZero) {
  const auto grid = make_grid(0.0, 1.0, 0.01);
  std::vector<double> totals;
  for (std::uint64_t p = 0; p < 4000; ++p) {
    Rng rng(7, p, StreamRole::FastNoise);
    totals.push_back(sample_increments(scalar_noise(1.0, 5.0, -0.5, 0.5), grid, rng).dJ.sum());
  }
  const SampleStats st = summarize(totals);
  EXPECT_NEAR(st.mean, 0.0, 3.0 * st.se_mean);
}

TEST(Increments, CompensatorUsesJumpMean) {
  // Positive jumps: the drift -lambda E[z] dt is visible between jumps.
  Rng rng(3);
  const auto s = sample_increments(scalar_noise(1.0, 2.0, 0.2, 0.6), make_grid(0.0, 1.0, 0.5), rng);
  double jumps = 0.0;
  for (const auto &e : s.jump_events) {
    jumps += e.size[0];
  }
  EXPECT_NEAR(s.dJ.sum(), jumps - 2.0 * 0.4 * 1.0, 1e-12);
}

TEST(RescaleFast, EpsilonOneMatchesUnscaled) {
  const auto grid = make_grid(0.0, 1.0, 0.01);
  Rng a(9), b(9);
  const auto x = sample_increments(scalar_noise(1.0, 3.0, -0.5, 0.5), grid, a);
  const auto y = rescale_fast(scalar_noise(1.0, 3.0, -0.5, 0.5), 1.0, grid, b);
  EXPECT_TRUE(x.dW.isApprox(y.dW, 0.0));
  EXPECT_TRUE(x.dJ.isApprox(y.dJ, 0.0));
}

TEST(RescaleFast, BrownianVarianceScalesWithInverseEpsilon) {
  Rng rng(10);
  const auto s = rescale_fast(scalar_noise(1.0), 0.01, make_grid(0.0, 100.0, 0.001), rng);
  const SampleStats st = summarize(row(s.dW));
  EXPECT_NEAR(st.variance, 0.1, 3.0 * st.se_variance);
}

TEST(RescaleFast, JumpCountScalesWithInverseEpsilon) {
  const auto grid = make_grid(0.0, 1.0, 0.01);
  std::vector<double> counts;
  for (std::uint64_t p = 0; p < 2000; ++p) {
    Rng rng(11, p, StreamRole::FastNoise);
    counts.push_back(static_cast<double>(
        rescale_fast(scalar_noise(1.0, 2.0, -0.5, 0.5), 0.1, grid, rng).jump_events.size()));
  }
  const SampleStats st = summarize(counts);
  EXPECT_NEAR(st.mean, 20.0, 3.0 * st.se_mean);
  Rng rng(1);
  EXPECT_THROW((void)rescale_fast(scalar_noise(1.0), 0.0, grid, rng), InvalidArgument);
}

TEST(Coarsen, PairsOfStepsAreSummed) {
  Rng rng(12);
  const auto s = sample_increments(scalar_noise(1.0, 4.0, -0.5, 0.5), make_grid(0.0, 1.0, 0.125), rng);
  const auto c = s.coarsen();
  ASSERT_EQ(c.steps(), 4u);
  EXPECT_NEAR(c.dW(0, 1), s.dW(0, 2) + s.dW(0, 3), 1e-15);
  EXPECT_NEAR(c.dJ.sum(), s.dJ.sum(), 1e-12);
}

TEST(TwoSided, ZeroNegativeHorizon) {
  Rng a(13), b(13);
  const auto p = sample_two_sided(scalar_noise(1.0), 0.0, 1.0, 0.1, a);
  EXPECT_EQ(p.negative.steps(), 0u);
  const auto direct = sample_increments(scalar_noise(1.0), make_grid(0.0, 1.0, 0.1), b);
  EXPECT_TRUE(p.positive.dW.isApprox(direct.dW, 0.0));
}

TEST(TwoSided, AnchoredAtZero) {
  Rng rng(14);
  const auto p = sample_two_sided(scalar_noise(1.0, 2.0, -0.5, 0.5), 2.0, 1.0, 0.1, rng);
  const auto [t, v] = p.values();
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (std::abs(t[k]) < 1e-12) {
      EXPECT_EQ(v(0, static_cast<Index>(k)), 0.0);
    }
  }
  EXPECT_THROW((void)sample_two_sided(scalar_noise(1.0), -1.0, 1.0, 0.1, rng), InvalidArgument);
}

TEST(TwoSided, SidesAreUncorrelated) {
  std::vector<double> prod, left, right;
  for (std::uint64_t p = 0; p < 4000; ++p) {
    Rng rng(15, p, StreamRole::SlowNoise);
    const auto s = sample_two_sided(scalar_noise(1.0, 1.0, -0.5, 0.5), 1.0, 1.0, 0.1, rng);
    const double a = s.negative.dW.sum() + s.negative.dJ.sum();
    const double b = s.positive.dW.sum() + s.positive.dJ.sum();
    prod.push_back(a * b);
  }
  const SampleStats st = summarize(prod);
  EXPECT_NEAR(st.mean, 0.0, 3.0 * st.se_mean);
}
