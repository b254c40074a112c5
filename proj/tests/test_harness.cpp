#include <cmath>
#include <stdexcept>

#include <gtest/gtest.h>

#include "slowfast/harness.hpp"

using namespace slowfast;

namespace {

std::vector<double> normals(std::uint64_t seed, std::size_t n, double shift = 0.0) {
  Rng rng(seed, 0, StreamRole::Auxiliary);
  std::vector<double> out(n);
  for (auto &v : out) {
    v = rng.normal() + shift;
  }
  return out;
}

} // namespace

TEST(Ensemble, ConstantTaskGivesEqualOutputs) {
  const Ensemble e = run_ensemble(
      "const", [](const StreamFactory &) { return std::optional<Vector>(Vector::Constant(2, 3.5)); }, 17, 1);
  ASSERT_EQ(e.outputs.size(), 17u);
  for (const auto &v : e.outputs) {
    EXPECT_EQ(v, Vector::Constant(2, 3.5));
  }
}

TEST(Ensemble, NormalSamplerMean) {
  const EnsembleTask task = [](const StreamFactory &sf) -> std::optional<Vector> {
    return Vector::Constant(1, sf.stream(StreamRole::SlowNoise).normal());
  };
  const SampleStats s = summarize(run_ensemble("normal", task, 10000, 3).column(0));
  EXPECT_NEAR(s.mean, 0.0, 3.0 * s.se_mean);
  EXPECT_NEAR(s.variance, 1.0, 3.0 * s.se_variance);
}

TEST(Ensemble, IdenticalAcrossWorkerCounts) {
  const EnsembleTask task = [](const StreamFactory &sf) -> std::optional<Vector> {
    Rng r = sf.stream(StreamRole::FastNoise);
    Vector v(3);
    for (int i = 0; i < 3; ++i) {
      v[i] = r.normal();
    }
    return v;
  };
  const Ensemble a = run_ensemble("w", task, 101, 9, 1);
  for (unsigned w : {2u, 3u, 8u}) {
    const Ensemble b = run_ensemble("w", task, 101, 9, w);
    ASSERT_EQ(a.outputs.size(), b.outputs.size());
    for (std::size_t i = 0; i < a.outputs.size(); ++i) {
      EXPECT_EQ(a.outputs[i], b.outputs[i]);
    }
  }
}

TEST(Ensemble, DivergedPathsAreCountedNotReturned) {
  const EnsembleTask task = [](const StreamFactory &sf) -> std::optional<Vector> {
    if (sf.path_index() % 4 == 0) {
      return std::nullopt;
    }
    if (sf.path_index() % 4 == 1) {
      throw Diverged("blow-up");
    }
    return Vector::Constant(1, static_cast<double>(sf.path_index()));
  };
  const Ensemble e = run_ensemble("div", task, 20, 1, 2);
  EXPECT_EQ(e.diverged, 10u);
  EXPECT_EQ(e.outputs.size(), 10u);
  EXPECT_TRUE(e.warning());
  for (std::size_t i = 0; i < e.outputs.size(); ++i) {
    EXPECT_EQ(e.outputs[i][0], static_cast<double>(e.indices[i]));
  }
}

TEST(Ensemble, OtherErrorsPropagate) {
  const EnsembleTask task = [](const StreamFactory &sf) -> std::optional<Vector> {
    if (sf.path_index() == 5) {
      throw std::logic_error("bug");
    }
    return Vector::Zero(1);
  };
  EXPECT_THROW((void)run_ensemble("err", task, 10, 1, 3), std::logic_error);
}

TEST(Stats, SummarizeSmallSample) {
  const SampleStats s = summarize({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.variance, 5.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.se_mean, std::sqrt(5.0 / 3.0 / 4.0));
}

TEST(Stats, StudentQuantile) {
  EXPECT_NEAR(student_t_quantile(0.975, 9.0), 2.262157, 1e-6);
  EXPECT_NEAR(student_t_quantile(0.95, 1e6), 1.644854, 1e-5);
}

TEST(Ks, ConstantMatchesTable) {
  EXPECT_NEAR(ks_constant(0.01), 1.627624, 1e-6);
  EXPECT_NEAR(ks_constant(0.05), 1.358102, 1e-6);
}

TEST(Ks, SameArrayHasZeroDistance) {
  const auto a = normals(1, 500);
  EXPECT_EQ(ks_distance(a, a), 0.0);
  EXPECT_TRUE(two_sample_compare(a, a).pass);
}

TEST(Ks, DistanceMatchesBruteForce) {
  const auto a = normals(2, 60), b = normals(3, 45, 0.3);
  double brute = 0.0;
  auto cdf = [](const std::vector<double> &s, double t) {
    double c = 0.0;
    for (double v : s) {
      c += v <= t ? 1.0 : 0.0;
    }
    return c / static_cast<double>(s.size());
  };
  for (const auto *s : {&a, &b}) {
    for (double t : *s) {
      brute = std::max(brute, std::abs(cdf(a, t) - cdf(b, t)));
    }
  }
  EXPECT_DOUBLE_EQ(ks_distance(a, b), brute);
}

TEST(Ks, CalibrationOverSeeds) {
  int passes = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    passes += two_sample_compare(normals(2 * s, 10000), normals(2 * s + 1, 10000), 0.01).pass ? 1 : 0;
  }
  EXPECT_GE(passes, 98);
}

TEST(Ks, DetectsShift) {
  const TwoSampleReport r = two_sample_compare(normals(4, 10000), normals(5, 10000, 0.5), 0.01);
  EXPECT_FALSE(r.pass);
  EXPECT_GT(r.max_distance(), 5.0 * r.coordinates.front().critical_value);
}

TEST(Ks, DegenerateSamplesUseMomentsOnly) {
  const std::vector<double> a(50, 1.0), b(80, 1.0);
  const TwoSampleReport r = two_sample_compare(a, b);
  EXPECT_TRUE(r.pass);
  EXPECT_TRUE(r.coordinates.front().degenerate);
}

TEST(RateFit, IdentityHasSlopeOne) {
  const RateFit f = fit_loglog_rate({0.1, 0.2, 0.4, 0.8}, {0.1, 0.2, 0.4, 0.8});
  EXPECT_NEAR(f.slope, 1.0, 1e-12);
  EXPECT_NEAR(f.intercept, 0.0, 1e-12);
  EXPECT_NEAR(f.slope_se, 0.0, 1e-12);
}

TEST(RateFit, NoisyPowerLawMatchesDirectRegression) {
  Rng rng(6);
  std::vector<double> xs, ys;
  for (int k = 1; k <= 12; ++k) {
    const double x = std::ldexp(1.0, -k);
    xs.push_back(x);
    ys.push_back(3.0 * std::pow(x, 0.7) * std::exp(0.05 * rng.normal()));
  }
  const RateFit f = fit_loglog_rate(xs, ys);
  // Direct least squares on [1, log x] by QR.
  Matrix X(12, 2);
  Vector Y(12);
  for (Index i = 0; i < 12; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = std::log(xs[static_cast<std::size_t>(i)]);
    Y[i] = std::log(ys[static_cast<std::size_t>(i)]);
  }
  const Vector beta = X.colPivHouseholderQr().solve(Y);
  const double rss = (Y - X * beta).squaredNorm();
  const Matrix cov = rss / 10.0 * (X.transpose() * X).inverse();
  EXPECT_NEAR(f.slope, beta[1], 1e-10);
  EXPECT_NEAR(f.intercept, beta[0], 1e-10);
  EXPECT_NEAR(f.slope_se, std::sqrt(cov(1, 1)), 1e-10);
  EXPECT_LE(f.ci_low, 0.7);
  EXPECT_GE(f.ci_high, 0.7);
  EXPECT_GT(f.lower_bound_95, f.ci_low);
}

TEST(RateFit, RejectsBadInput) {
  EXPECT_THROW((void)fit_loglog_rate({1.0, 2.0}, {1.0, 2.0}), InvalidArgument);
  EXPECT_THROW((void)fit_loglog_rate({1.0, 2.0, 3.0}, {1.0, -2.0, 3.0}), InvalidArgument);
}
