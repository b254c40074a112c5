#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "slowfast/benchmarks.hpp"
#include "slowfast/harness.hpp"
#include "slowfast/integrator.hpp"

using namespace slowfast;

namespace {

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }
Vector v1(double v) { return Vector::Constant(1, v); }

SlowFastModel quiet_model(double eps) {
  SlowFastModel m = linear_benchmark(eps);
  m.f = DriftFn::zero(1);
  m.fast.sigma = m1(0.0);
  m.y0 = v1(1.0);
  return m;
}

double euler_decay(double a, double x, double dt, int steps, double c = 0.0) {
  const Vector zero = Vector::Zero(1);
  Vector s = v1(x);
  for (int k = 0; k < steps; ++k) {
    s = step(s, m1(a), v1(c), m1(0.0), dt, zero, zero);
  }
  return s[0];
}

} // namespace

TEST(Step, ZeroDriftZeroNoiseIsIdentity) {
  const Vector x = v1(0.7), z = Vector::Zero(1);
  EXPECT_EQ(step(x, m1(0.0), z, m1(0.0), 0.1, z, z)[0], 0.7);
}

TEST(Step, LinearDecayApproximatesExponential) {
  EXPECT_NEAR(euler_decay(-1.0, 1.0, 0.001, 1000), std::exp(-1.0), 2e-3);
}

TEST(Step, ConstantForcingApproximatesVariationOfConstants) {
  EXPECT_NEAR(euler_decay(-1.0, 0.0, 0.001, 1000, 1.0), 1.0 - std::exp(-1.0), 2e-3);
}

TEST(Step, NoiseEntersThroughSigma) {
  const Vector x = v1(0.0);
  EXPECT_DOUBLE_EQ(step(x, m1(0.0), v1(0.0), m1(2.0), 0.1, v1(0.3), v1(-0.1))[0], 0.4);
}

TEST(Step, NonFiniteThrowsDiverged) {
  const Vector z = Vector::Zero(1);
  EXPECT_THROW((void)step(v1(1e308), m1(10.0), z, m1(0.0), 1.0, z, z), Diverged);
  EXPECT_THROW((void)step(v1(1.0), m1(0.0), z, m1(0.0), 0.0, z, z), InvalidArgument);
}

TEST(Step, StrongOrderOneOnDeterministicLinear) {
  const double exact = std::exp(-1.0);
  const double e1 = std::abs(euler_decay(-1.0, 1.0, 0.01, 100) - exact);
  const double e2 = std::abs(euler_decay(-1.0, 1.0, 0.005, 200) - exact);
  EXPECT_NEAR(e1 / e2, 2.0, 0.2);
}

TEST(SlowFast, NoiselessUncoupledMatchesExponentials) {
  const double eps = 0.01;
  const SlowFastModel m = quiet_model(eps);
  Rng rng(1);
  const auto [x, y] = simulate_slow_fast(m, 1.0, eps / 100.0, rng);
  ASSERT_EQ(x.grid, y.grid);
  EXPECT_NEAR(x.final_state()[0], std::exp(-1.0), 2e-3);
  const Index k = 100; // t = 0.01, fast time 1
  EXPECT_NEAR(y.states(0, k), std::exp(-2.0), 2e-2);
}

TEST(SlowFast, RejectsTooLargeStep) {
  Rng rng(2);
  EXPECT_THROW((void)simulate_slow_fast(linear_benchmark(0.01), 1.0, 0.01, rng), StabilityError);
}

TEST(SlowFast, RejectsUnstableModel) {
  SlowFastModel m = linear_benchmark(0.1);
  m.A = m1(1.0);
  Rng rng(3);
  EXPECT_THROW((void)simulate_slow_fast(m, 1.0, 0.001, rng), AssumptionViolation);
}

TEST(SlowFast, ZeroHorizonReturnsInitialState) {
  Rng rng(4);
  const auto [x, y] = simulate_slow_fast(linear_benchmark(), 0.0, 1e-4, rng);
  ASSERT_EQ(x.points(), 1);
  EXPECT_EQ(x.final_state()[0], 1.0);
  EXPECT_EQ(y.final_state()[0], 0.0);
}

TEST(SlowFast, SupMomentStableAcrossEpsilonHalvings) {
  std::vector<double> means;
  for (double eps : {4e-3, 2e-3, 1e-3}) {
    const SlowFastModel m = linear_benchmark(eps);
    std::vector<double> sups;
    for (std::uint64_t p = 0; p < 200; ++p) {
      Rng rng(5, p, StreamRole::SlowNoise);
      const auto [x, y] = simulate_slow_fast(m, 1.0, eps / 10.0, rng);
      sups.push_back(x.states.cwiseAbs2().maxCoeff());
    }
    means.push_back(summarize(sups).mean);
  }
  for (double v : means) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(v, means.back(), 0.1 * means.back());
  }
}

TEST(SlowFast, EpsilonOneIsPlainSystem) {
  // With eps = 1 the coupled scheme is ordinary Euler on (x, y).
  const SlowFastModel m = linear_benchmark(1.0);
  Rng rng(6);
  const auto grid = make_grid(0.0, 1.0, 0.01);
  Rng r1(6);
  const auto slow = sample_increments(m.slow, grid, r1);
  const auto fast = rescale_fast(m.fast, 1.0, grid, r1);
  const auto [x, y] = simulate_slow_fast(m, slow, fast);
  double xs = 1.0, ys = 0.0;
  for (std::size_t k = 0; k < slow.steps(); ++k) {
    const double nx = xs + (-xs + ys) * 0.01;
    const double ny = ys + (-2.0 * ys) * 0.01 + fast.dW(0, static_cast<Index>(k));
    xs = nx;
    ys = ny;
  }
  EXPECT_NEAR(x.final_state()[0], xs, 1e-12);
  EXPECT_NEAR(y.final_state()[0], ys, 1e-12);
}

TEST(FrozenFast, StationaryVariance) {
  const SlowFastModel m = linear_benchmark();
  Rng rng(7);
  const Trajectory y = simulate_frozen_fast(m, v1(1.0), v1(0.0), 2000.0, 0.001, rng);
  // Batch means over blocks of length 10 (decorrelated at rate 2).
  std::vector<double> blocks;
  const Index per = 10000;
  for (Index b = 1; b < y.points() / per; ++b) {
    blocks.push_back(y.states.block(0, b * per, 1, per).cwiseAbs2().mean());
  }
  const SampleStats st = summarize(blocks);
  // Euler OU stationary variance: dt / (1 - (1 - 2 dt)^2).
  const double oracle = 0.001 / (1.0 - 0.998 * 0.998);
  EXPECT_NEAR(st.mean, oracle, 3.0 * st.se_mean);
  EXPECT_NEAR(oracle, 0.25, 3e-4);
}

TEST(FrozenFast, DeterministicDecay) {
  SlowFastModel m = linear_benchmark();
  m.fast.sigma = m1(0.0);
  Rng rng(8);
  const Trajectory y = simulate_frozen_fast(m, v1(0.0), v1(1.0), 1.0, 0.001, rng);
  EXPECT_NEAR(y.final_state()[0], std::exp(-2.0), 2e-3);
}

TEST(FrozenFast, ConstantForcingMean) {
  const SlowFastModel m = constant_forcing_benchmark();
  Rng rng(9);
  const Trajectory y = simulate_frozen_fast(m, v1(0.0), v1(0.0), 1000.0, 0.01, rng);
  std::vector<double> blocks;
  const Index per = 1000;
  for (Index b = 1; b < y.points() / per; ++b) {
    blocks.push_back(y.states.block(0, b * per, 1, per).mean());
  }
  const SampleStats st = summarize(blocks);
  EXPECT_NEAR(st.mean, 0.5, 3.0 * st.se_mean);
}

TEST(FrozenFast, StreamingMatchesStored) {
  const SlowFastModel m = tanh_benchmark();
  Rng a(10), b(10);
  const Trajectory y = simulate_frozen_fast(m, v1(0.3), v1(0.1), 5.0, 0.01, a);
  std::vector<double> seen;
  stream_frozen_fast(m, v1(0.3), v1(0.1), 5.0, 0.01, b,
                     [&](std::size_t, double, const Vector &v) { seen.push_back(v[0]); });
  ASSERT_EQ(static_cast<Index>(seen.size()), y.points());
  for (Index k = 0; k < y.points(); ++k) {
    EXPECT_EQ(seen[static_cast<std::size_t>(k)], y.states(0, k));
  }
}

TEST(Csv, FullPrecisionRoundTrip) {
  Trajectory tr;
  tr.grid = {0.0, 0.1};
  tr.states = Matrix(1, 2);
  tr.states << 1.0 / 3.0, -2e-300;
  std::ostringstream os;
  write_csv(os, tr, 'x');
  std::istringstream is(os.str());
  std::string header, r0, r1;
  std::getline(is, header);
  std::getline(is, r0);
  std::getline(is, r1);
  EXPECT_EQ(header, "t,x1");
  EXPECT_EQ(std::stod(r0.substr(r0.find(',') + 1)), 1.0 / 3.0);
  EXPECT_EQ(std::stod(r1.substr(r1.find(',') + 1)), -2e-300);
}
