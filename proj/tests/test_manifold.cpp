#include <cmath>

#include <gtest/gtest.h>

#include "slowfast/benchmarks.hpp"
#include "slowfast/manifold.hpp"

using namespace slowfast;

namespace {

Vector v1(double v) { return Vector::Constant(1, v); }

SlowFastModel noisy_slow_linear() {
  SlowFastModel m = linear_benchmark(0.05);
  m.slow.sigma = Matrix::Constant(1, 1, 1.0);
  return m;
}

double sample_variance(const StationarySolutionSpec &spec, int N, std::uint64_t seed) {
  std::vector<double> xs;
  for (int p = 0; p < N; ++p) {
    Rng rng(seed, static_cast<std::uint64_t>(p), StreamRole::InitialState);
    xs.push_back(stationary_solution(spec, rng).value[0]);
  }
  return summarize(xs).variance;
}

} // namespace

TEST(Stationary, FastProcessVariance) {
  const StationarySolutionSpec spec = make_stationary_spec(linear_benchmark(), StationaryKind::Xi, 1.0);
  EXPECT_NEAR(spec.T_neg, 5.0, 1e-12);
  // B = -2, sigma = 1: variance 1 / 4.
  EXPECT_NEAR(sample_variance(spec, 3000, 1), 0.25, 3.0 * 0.25 * std::sqrt(2.0 / 3000));
}

TEST(Stationary, SlowProcessVarianceIsEpsilonFree) {
  for (double eps : {1.0, 0.1}) {
    const StationarySolutionSpec spec =
        make_stationary_spec(noisy_slow_linear(), StationaryKind::EtaEps, eps, std::nullopt, 0.02 / eps);
    EXPECT_NEAR(sample_variance(spec, 3000, 2), 0.5, 3.0 * 0.5 * std::sqrt(2.0 / 3000)) << eps;
  }
}

TEST(Stationary, RejectsShortHorizonAndUnstableMatrix) {
  StationarySolutionSpec spec = make_stationary_spec(linear_benchmark(), StationaryKind::Xi, 1.0, 1.0);
  Rng rng(3);
  EXPECT_THROW((void)stationary_solution(spec, rng), InvalidArgument);
  spec.matrix = Matrix::Constant(1, 1, 0.5);
  spec.T_neg = 100.0;
  EXPECT_THROW((void)stationary_solution(spec, rng), AssumptionViolation);
}

TEST(Contraction, MatchesClosedForm) {
  DecayRates r;
  r.gamma_B = 2.0;
  r.gamma_A_prime = 1.0;
  const ContractionFactors c = contraction_factors(1.0, 0.25, r, 0.1, 0.5);
  const double rho = 0.1 / 0.4 + 0.25 / 1.5;
  const double Lh = 0.25 / (1.5 * (1.0 - rho));
  EXPECT_NEAR(c.rho, rho, 1e-15);
  EXPECT_NEAR(c.L_h, Lh, 1e-15);
  EXPECT_NEAR(c.rho_hat, rho + 0.1 * 0.25 * Lh / 0.4, 1e-15);
  EXPECT_TRUE(c.contracting());
  EXPECT_THROW((void)contraction_factors(1.0, 0.25, r, 0.1, 1.9), InvalidArgument);
  EXPECT_THROW((void)contraction_factors(1.0, 0.25, r, 0.1, 0.05), InvalidArgument);
}

TEST(LyapunovPerron, ZeroFastForcingGivesFlatManifold) {
  const SlowFastModel m = linear_benchmark(0.05);
  Rng rng(4);
  const ManifoldNoise w = sample_manifold_noise(m, 15.0, 0.0, 0.01, rng);
  const ManifoldSolution s = lyapunov_perron_solve(m, 0.05, v1(0.7), w);
  EXPECT_NEAR(s.h_value[0], 0.0, 1e-12);
}

TEST(LyapunovPerron, ConstantForcingGivesHalf) {
  const SlowFastModel m = constant_forcing_benchmark(0.05);
  Rng rng(5);
  const ManifoldNoise w = sample_manifold_noise(m, 15.0, 0.0, 0.01, rng);
  for (double u : {-1.0, 0.0, 2.0}) {
    EXPECT_NEAR(lyapunov_perron_solve(m, 0.05, v1(u), w).h_value[0], 0.5, 1e-9) << u;
  }
  EXPECT_NEAR(asymptotic_manifold_solve(m, v1(0.3), w).h_value[0], 0.5, 1e-9);
}

TEST(LyapunovPerron, ContractsAndHasSmallResidual) {
  const SlowFastModel m = tanh_benchmark(0.05);
  Rng rng(6);
  const ManifoldNoise w = sample_manifold_noise(m, 15.0, 0.0, 0.01, rng);
  const ManifoldSolution s = lyapunov_perron_solve(m, 0.05, v1(0.4), w);
  EXPECT_LT(s.rho, 1.0);
  EXPECT_LE(s.max_residual_ratio(), s.rho + 1e-6);
  EXPECT_LT(lp_posterior_residual(m, s, w), 1e-9);
}

TEST(LyapunovPerron, GraphIsLipschitz) {
  const SlowFastModel m = tanh_benchmark(0.05);
  Rng rng(7);
  const ManifoldNoise w = sample_manifold_noise(m, 15.0, 0.0, 0.01, rng);
  const ManifoldSolution a = lyapunov_perron_solve(m, 0.05, v1(-0.5), w);
  const ManifoldSolution b = lyapunov_perron_solve(m, 0.05, v1(1.0), w);
  EXPECT_LE(std::abs(a.h_value[0] - b.h_value[0]) / 1.5, a.L_h);
}

TEST(LyapunovPerron, AsymptoticLimit) {
  const SlowFastModel m = tanh_benchmark(0.05);
  Rng rng(8);
  const ManifoldNoise w = sample_manifold_noise(m, 15.0, 0.0, 0.01, rng);
  const double h0 = asymptotic_manifold_solve(m, v1(0.4), w).h_value[0];
  double prev = std::numeric_limits<double>::infinity();
  for (double eps : {0.04, 0.02, 0.01}) {
    const double gap = std::abs(lyapunov_perron_solve(m, eps, v1(0.4), w).h_value[0] - h0);
    EXPECT_LT(gap, prev);
    prev = gap;
  }
}

TEST(AsymptoticH0, LinearFastEquationWithFrozenSlow) {
  // g = 0.25 tanh(x) does not depend on y, so h0 = 0.25 tanh(u0) / 2.
  const SlowFastModel m = tanh_benchmark(0.05);
  Rng rng(9);
  EXPECT_NEAR(asymptotic_manifold_h0(m, v1(0.8), 0.01, 15.0, rng)[0], 0.125 * std::tanh(0.8), 1e-4);
}

TEST(Tracking, IdenticalInitialConditions) {
  const SlowFastModel m = tanh_benchmark(0.05);
  Rng rng(10);
  const ManifoldNoise w = sample_manifold_noise(m, 15.0, 2.0, 0.01, rng);
  const TrackingResult r = tracking_check(m, 0.05, {v1(0.2), v1(0.1)}, {v1(0.2), v1(0.1)}, 2.0, w);
  EXPECT_TRUE(r.identical);
  EXPECT_TRUE(r.under_envelope);
}

TEST(Tracking, LinearBenchmarkDecaysAtFastRate) {
  const SlowFastModel m = linear_benchmark(0.05);
  Rng rng(11);
  const ManifoldNoise w = sample_manifold_noise(m, 15.0, 6.0, 0.01, rng);
  const Vector u = v1(0.3);
  const Vector h = lyapunov_perron_solve(m, 0.05, u, w).h_value;
  const TrackingPartner p = find_tracking_partner(m, 0.05, u, h + v1(1.0), w, 6.0);
  const TrackingResult r = tracking_check(m, 0.05, {p.u0, p.h}, {u, h + v1(1.0)}, 6.0, w);
  EXPECT_NEAR(r.fitted_rate, 2.0, 0.1);
  EXPECT_TRUE(r.under_envelope);
}

TEST(ExponentialFit, RecoversRate) {
  std::vector<double> t, d;
  for (int k = 0; k <= 50; ++k) {
    t.push_back(0.1 * k);
    d.push_back(3.0 * std::exp(-1.7 * 0.1 * k));
  }
  EXPECT_NEAR(fit_exponential_rate(t, d, 0.0), 1.7, 1e-12);
}
