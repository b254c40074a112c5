#include <cmath>

#include <gtest/gtest.h>

#include "slowfast/averaging.hpp"
#include "slowfast/benchmarks.hpp"

using namespace slowfast;

namespace {

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }
Vector v1(double v) { return Vector::Constant(1, v); }

/// E[phi(mu + s Z)] by composite Simpson on [-12 s, 12 s].
template <class F> double gaussian_expectation(F phi, double mu, double s) {
  const int N = 4000;
  const double a = -12.0, h = 24.0 / N;
  double acc = 0.0;
  for (int i = 0; i <= N; ++i) {
    const double z = a + i * h;
    const double w = (i == 0 || i == N) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * phi(mu + s * z) * std::exp(-0.5 * z * z);
  }
  return acc * h / 3.0 / std::sqrt(2.0 * M_PI);
}

} // namespace

TEST(EstimateFbar, LinearBenchmarkIsZero) {
  Rng rng(1);
  const FbarEstimate e = estimate_fbar(linear_benchmark(), v1(0.5), 5.0, 305.0, 0.01, rng, 8);
  EXPECT_NEAR(e.value[0], 0.0, 3.0 * e.standard_error[0]);
  EXPECT_GT(e.standard_error[0], 0.0);
}

TEST(EstimateFbar, ConstantForcingIsHalf) {
  Rng rng(2);
  const FbarEstimate e = estimate_fbar(constant_forcing_benchmark(), v1(0.5), 5.0, 305.0, 0.01, rng, 8);
  EXPECT_NEAR(e.value[0], 0.5, 3.0 * e.standard_error[0]);
}

TEST(EstimateFbar, YIndependentDriftIsExact) {
  SlowFastModel m = linear_benchmark();
  m.f = DriftFn::parse({"x1*x1 - 1"}, 1);
  Rng rng(3);
  const FbarEstimate e = estimate_fbar(m, v1(2.0), 1.0, 2.0, 0.01, rng, 4);
  EXPECT_DOUBLE_EQ(e.value[0], 3.0);
  EXPECT_EQ(e.standard_error[0], 0.0);
}

TEST(GaussHermite, IntegratesPolynomialMoments) {
  const GaussHermite gh = gauss_hermite(10);
  double m0 = 0, m2 = 0, m4 = 0, m6 = 0;
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
    const double z = gh.nodes[i], w = gh.weights[i];
    m0 += w;
    m2 += w * z * z;
    m4 += w * std::pow(z, 4);
    m6 += w * std::pow(z, 6);
  }
  EXPECT_NEAR(m0, 1.0, 1e-13);
  EXPECT_NEAR(m2, 1.0, 1e-12);
  EXPECT_NEAR(m4, 3.0, 1e-11);
  EXPECT_NEAR(m6, 15.0, 1e-10);
}

TEST(Lyapunov, ScalarAndMatrixSolutions) {
  EXPECT_NEAR(solve_lyapunov(m1(-2.0), m1(1.0))(0, 0), 0.25, 1e-15);
  Matrix B(2, 2), Q(2, 2);
  B << -2, 1, 0, -3;
  Q << 1, 0.2, 0.2, 2;
  const Matrix S = solve_lyapunov(B, Q);
  EXPECT_LT((B * S + S * B.transpose() + Q).norm(), 1e-12);
}

TEST(AveragedDrift, AffineUsesFastEquilibrium) {
  // f = x + 3 y, g = x + 1, B = -2: fbar(x) = x + 3 (x + 1) / 2.
  const DriftFn f = DriftFn::linear(m1(1.0), m1(3.0), v1(0.0));
  const DriftFn g = DriftFn::linear(m1(1.0), m1(0.0), v1(1.0));
  const AveragedDrift d = AveragedDrift::affine(f, g, m1(-2.0));
  EXPECT_EQ(d.kind(), FbarKind::AffineInY);
  EXPECT_NEAR(d(v1(0.4))[0], 0.4 + 1.5 * 1.4, 1e-14);
}

TEST(AveragedDrift, GaussianMatchesDirectIntegration) {
  const SlowFastModel m = tanh_benchmark();
  const AveragedModel am = build_averaged_model(m);
  ASSERT_EQ(am.fbar.kind(), FbarKind::GaussianQuadrature);
  for (double x : {-2.0, 0.0, 0.7, 3.0}) {
    const double mu = 0.125 * std::tanh(x); // -B^{-1} g(x)
    const double oracle = gaussian_expectation([](double y) { return std::tanh(y); }, mu, 0.5);
    EXPECT_NEAR(am.fbar(v1(x))[0], oracle, 1e-9) << x;
  }
  EXPECT_DOUBLE_EQ(am.fbar.stationary_covariance()(0, 0), 0.25);
}

TEST(AveragedDrift, GaussianAgreesWithErgodicEstimate) {
  const SlowFastModel m = tanh_benchmark();
  const AveragedModel am = build_averaged_model(m);
  Rng rng(4);
  const FbarEstimate e = estimate_fbar(m, v1(1.0), 5.0, 405.0, 0.005, rng, 8);
  EXPECT_NEAR(e.value[0], am.fbar(v1(1.0))[0], 3.0 * e.standard_error[0] + 2e-3);
}

TEST(AveragedDrift, TableReproducesAffineFunctions) {
  FbarTable t;
  t.lo = Vector::Constant(2, -1.0);
  t.hi = Vector::Constant(2, 2.0);
  t.nodes = {4, 7};
  t.values.resize(1, static_cast<Index>(t.size()));
  auto fn = [](const Vector &x) { return 0.5 + 2.0 * x[0] - 3.0 * x[1]; };
  for (std::size_t k = 0; k < t.size(); ++k) {
    t.values(0, static_cast<Index>(k)) = fn(t.node(k));
  }
  const AveragedDrift d = AveragedDrift::tabulated(t);
  Vector x(2);
  x << 0.37, 1.91;
  EXPECT_NEAR(d(x)[0], fn(x), 1e-12);
  x << 5.0, -4.0; // clamped to the box
  Vector c(2);
  c << 2.0, -1.0;
  EXPECT_NEAR(d(x)[0], fn(c), 1e-12);
}

TEST(BuildAveraged, SelectsRepresentation) {
  EXPECT_EQ(build_averaged_model(linear_benchmark()).fbar.kind(), FbarKind::AffineInY);
  SlowFastModel m = linear_benchmark();
  m.f = DriftFn::parse({"sin(x1)"}, 1);
  EXPECT_EQ(build_averaged_model(m).fbar.kind(), FbarKind::YIndependent);
  m = tanh_benchmark();
  m.g = DriftFn::parse({"0.1*tanh(y1)"}, 1);
  AveragingOptions o;
  o.table_nodes = 3;
  o.horizon = 20.0;
  o.table_half_width = 1.0;
  EXPECT_EQ(build_averaged_model(m, o).fbar.kind(), FbarKind::Tabulated);
  SlowFastModel bad = linear_benchmark();
  bad.B = m1(0.5);
  EXPECT_THROW((void)build_averaged_model(bad), AssumptionViolation);
}

TEST(BuildAveraged, TableWorkerIndependent) {
  SlowFastModel m = tanh_benchmark();
  m.g = DriftFn::parse({"0.1*tanh(y1)"}, 1);
  AveragingOptions o;
  o.strategy = FbarStrategy::Tabulate;
  o.table_nodes = 4;
  o.horizon = 10.0;
  const AveragedModel a = build_averaged_model(m, o);
  o.workers = 3;
  const AveragedModel b = build_averaged_model(m, o);
  EXPECT_EQ(a.fbar.table()->values, b.fbar.table()->values);
}

TEST(FbarLipschitz, WithinGuard) {
  const SlowFastModel m = tanh_benchmark();
  const FbarLipschitzCheck c = check_fbar_lipschitz(build_averaged_model(m), 1.0, 0.25, 2.0);
  EXPECT_TRUE(c.pass);
  EXPECT_LE(c.estimate, c.bound);
}

TEST(Mixing, ClosedFormBound) {
  Rng rng(5);
  const MixingReport r = mixing_diagnostic(linear_benchmark(), v1(0.0), {v1(2.0)}, 2.0, 0.01, 400, rng);
  EXPECT_DOUBLE_EQ(r.eta_bound, 4.0);
  EXPECT_NEAR(r.eta_empirical, 2.0, 0.3);
}

TEST(Mixing, RejectsSmallEnsembles) {
  Rng rng(6);
  EXPECT_THROW((void)mixing_diagnostic(linear_benchmark(), v1(0.3), {v1(2.0)}, 1.0, 0.01, 50, rng),
               InvalidArgument);
}

TEST(SimulateAveraged, NoiselessZeroDriftDecays) {
  SlowFastModel m = linear_benchmark();
  m.f = DriftFn::zero(1);
  const AveragedModel am = build_averaged_model(m);
  Rng rng(7);
  const Trajectory x = simulate_averaged(am, 1.0, 0.001, rng);
  EXPECT_NEAR(x.final_state()[0], std::exp(-1.0), 2e-3);
}

TEST(SimulateAveraged, LinearSdeVariance) {
  SlowFastModel m = linear_benchmark();
  m.f = DriftFn::zero(1);
  m.slow.sigma = m1(1.0);
  const AveragedModel am = build_averaged_model(m);
  std::vector<double> finals;
  for (std::uint64_t p = 0; p < 4000; ++p) {
    Rng rng(8, p, StreamRole::SlowNoise);
    finals.push_back(simulate_averaged(am, 1.0, 0.001, rng).final_state()[0]);
  }
  const SampleStats s = summarize(finals);
  EXPECT_NEAR(s.variance, 0.5 * (1.0 - std::exp(-2.0)), 3.0 * s.se_variance);
  EXPECT_NEAR(s.mean, std::exp(-1.0), 3.0 * s.se_mean + 1e-3);
}

TEST(Auxiliary, FastErrorShrinksWithBlockLength) {
  const double eps = 0.01;
  const SlowFastModel m = tanh_benchmark(eps);
  std::vector<double> means;
  for (double delta : {0.2, 0.05, 0.0125}) {
    std::vector<double> sups;
    for (std::uint64_t p = 0; p < 100; ++p) {
      Rng rng(9, p, StreamRole::Auxiliary);
      const AuxiliaryPaths a = simulate_auxiliary(m, delta, 1.0, eps / 10.0, rng);
      sups.push_back((a.y.states - a.y_hat.states).cwiseAbs2().maxCoeff());
    }
    means.push_back(summarize(sups).mean);
  }
  EXPECT_GT(means[0], means[1]);
  EXPECT_GT(means[1], means[2]);
}

TEST(StrongError, YIndependentDriftHasNoError) {
  SlowFastModel m = linear_benchmark();
  m.f = DriftFn::parse({"0.5*x1"}, 1);
  const AveragedModel am = build_averaged_model(m);
  const RateReport r = strong_error_experiment(m, am, {0.1, 0.05, 0.025}, DeltaRule{}, 1.0, 100, 3);
  for (const auto &p : r.points) {
    EXPECT_LT(p.error, 1e-20);
  }
}

TEST(StrongError, ErrorsDecreaseWithEpsilon) {
  const SlowFastModel m = tanh_benchmark();
  const AveragedModel am = build_averaged_model(m);
  const RateReport r = strong_error_experiment(m, am, {0.1, 0.05, 0.025, 0.0125}, DeltaRule{}, 1.0, 200, 4);
  EXPECT_TRUE(r.monotone(2.0));
  EXPECT_GT(r.fit.slope, 0.25);
  EXPECT_DOUBLE_EQ(r.points[0].bound, std::pow(0.1, 1.0 / 3.0));
}
