#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "slowfast/rng.hpp"
#include "slowfast/types.hpp"

namespace slowfast {

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

/// Per-path task: receives the substream factory of its path and returns the
/// path output, or std::nullopt when the path diverged.
using EnsembleTask = std::function<std::optional<Vector>(const StreamFactory &)>;

struct Ensemble {
  std::string task_id;
  std::uint64_t master_seed = 0;
  std::size_t n_paths = 0;
  std::vector<Vector> outputs;      ///< non-diverged outputs, ordered by path index
  std::vector<std::size_t> indices; ///< path index of each output
  std::size_t diverged = 0;

  /// More than 5% of the paths diverged.
  [[nodiscard]] bool warning() const noexcept {
    return n_paths > 0 && static_cast<double>(diverged) > 0.05 * static_cast<double>(n_paths);
  }

  /// Coordinate `i` of every valid output.
  [[nodiscard]] std::vector<double> column(Index i) const {
    std::vector<double> out;
    out.reserve(outputs.size());
    for (const auto &v : outputs) {
      out.push_back(v[i]);
    }
    return out;
  }
};

/// Runs `task` for path indices 0..N-1. Each path draws randomness only from
/// its own substreams and writes to its own slot, so the result does not
/// depend on `workers`.
[[nodiscard]] inline Ensemble run_ensemble(const std::string &task_id, const EnsembleTask &task,
                                           std::size_t N, std::uint64_t master_seed,
                                           unsigned workers = 1) {
  require(N >= 1, "run_ensemble: N must be at least 1");
  std::vector<std::optional<Vector>> slots(N);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= N) {
        return;
      }
      try {
        slots[i] = task(StreamFactory(master_seed, i));
      } catch (const Diverged &) {
        slots[i].reset();
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) {
          failure = std::current_exception();
        }
        next.store(N);
        return;
      }
    }
  };

  const unsigned w = std::max(1U, std::min<unsigned>(workers, static_cast<unsigned>(N)));
  if (w == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(w);
    for (unsigned k = 0; k < w; ++k) {
      pool.emplace_back(worker);
    }
    for (auto &t : pool) {
      t.join();
    }
  }
  if (failure) {
    std::rethrow_exception(failure);
  }

  Ensemble e;
  e.task_id = task_id;
  e.master_seed = master_seed;
  e.n_paths = N;
  for (std::size_t i = 0; i < N; ++i) {
    if (slots[i] && slots[i]->allFinite()) {
      e.outputs.push_back(std::move(*slots[i]));
      e.indices.push_back(i);
    } else {
      ++e.diverged;
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Summary statistics
// ---------------------------------------------------------------------------

struct SampleStats {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0; ///< unbiased
  double se_mean = 0.0;
  double se_variance = 0.0; ///< large-sample SE from the fourth central moment
};

[[nodiscard]] inline SampleStats summarize(const std::vector<double> &xs) {
  SampleStats s;
  s.n = xs.size();
  if (s.n == 0) {
    return s;
  }
  const double n = static_cast<double>(s.n);
  double sum = 0.0;
  for (double v : xs) {
    sum += v;
  }
  s.mean = sum / n;
  if (s.n < 2) {
    return s;
  }
  double m2 = 0.0, m4 = 0.0;
  for (double v : xs) {
    const double d = v - s.mean;
    const double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  s.variance = m2 / (n - 1.0);
  s.se_mean = std::sqrt(s.variance / n);
  const double mu2 = m2 / n;
  const double mu4 = m4 / n;
  s.se_variance = std::sqrt(std::max(0.0, mu4 - mu2 * mu2) / n);
  return s;
}

[[nodiscard]] inline double student_t_quantile(double p, double dof) {
  boost::math::students_t dist(dof);
  return boost::math::quantile(dist, p);
}

// ---------------------------------------------------------------------------
// Two-sample comparison
// ---------------------------------------------------------------------------

/// Asymptotic Kolmogorov-Smirnov constant c(alpha) = sqrt(-ln(alpha/2)/2).
[[nodiscard]] inline double ks_constant(double alpha) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  return std::sqrt(-std::log(alpha / 2.0) / 2.0);
}

/// Sup distance between the empirical CDFs of two samples.
[[nodiscard]] inline double ks_distance(std::vector<double> a, std::vector<double> b) {
  require(!a.empty() && !b.empty(), "ks_distance: samples must be non-empty");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double t = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == t) {
      ++i;
    }
    while (j < b.size() && b[j] == t) {
      ++j;
    }
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

struct CoordinateComparison {
  double mean_diff = 0.0;
  double mean_diff_se = 0.0;
  double var_diff = 0.0;
  double var_diff_se = 0.0;
  double cdf_distance = 0.0;
  double critical_value = 0.0;
  bool degenerate = false;
  bool pass = false;
};

struct TwoSampleReport {
  std::size_t n = 0;
  std::size_t m = 0;
  double alpha = 0.01;
  std::vector<CoordinateComparison> coordinates;
  Matrix covariance_diff;
  bool pass = false;

  [[nodiscard]] double max_distance() const {
    double d = 0.0;
    for (const auto &c : coordinates) {
      d = std::max(d, c.cdf_distance);
    }
    return d;
  }
};

namespace detail {

inline Matrix sample_covariance(const std::vector<Vector> &s) {
  const Index d = s.front().size();
  Vector mean = Vector::Zero(d);
  for (const auto &v : s) {
    mean += v;
  }
  mean /= static_cast<double>(s.size());
  Matrix c = Matrix::Zero(d, d);
  for (const auto &v : s) {
    c.noalias() += (v - mean) * (v - mean).transpose();
  }
  return s.size() > 1 ? Matrix(c / static_cast<double>(s.size() - 1)) : c;
}

inline bool within(double diff, double se, double k) {
  return std::abs(diff) <= k * se + 1e-12 * (1.0 + std::abs(diff));
}

} // namespace detail

/// Per-coordinate sup-CDF distance against c(alpha) sqrt((n+m)/(nm)) plus
/// 3-SE gates on the mean and variance differences.
[[nodiscard]] inline TwoSampleReport two_sample_compare(const std::vector<Vector> &a,
                                                        const std::vector<Vector> &b,
                                                        double alpha = 0.01) {
  require(!a.empty() && !b.empty(), "two_sample_compare: samples must be non-empty");
  const Index d = a.front().size();
  for (const auto &v : a) {
    require(v.size() == d, "two_sample_compare: inconsistent sample dimension");
  }
  for (const auto &v : b) {
    require(v.size() == d, "two_sample_compare: inconsistent sample dimension");
  }
  TwoSampleReport r;
  r.n = a.size();
  r.m = b.size();
  r.alpha = alpha;
  const double n = static_cast<double>(r.n);
  const double m = static_cast<double>(r.m);
  const double critical = ks_constant(alpha) * std::sqrt((n + m) / (n * m));
  r.pass = true;
  for (Index i = 0; i < d; ++i) {
    std::vector<double> ca, cb;
    ca.reserve(a.size());
    cb.reserve(b.size());
    for (const auto &v : a) {
      ca.push_back(v[i]);
    }
    for (const auto &v : b) {
      cb.push_back(v[i]);
    }
    const SampleStats sa = summarize(ca);
    const SampleStats sb = summarize(cb);
    CoordinateComparison c;
    c.mean_diff = sa.mean - sb.mean;
    c.mean_diff_se = std::hypot(sa.se_mean, sb.se_mean);
    c.var_diff = sa.variance - sb.variance;
    c.var_diff_se = std::hypot(sa.se_variance, sb.se_variance);
    c.critical_value = critical;
    c.degenerate = sa.variance == 0.0 && sb.variance == 0.0;
    const bool moments = detail::within(c.mean_diff, c.mean_diff_se, 3.0) &&
                         detail::within(c.var_diff, c.var_diff_se, 3.0);
    if (c.degenerate) {
      c.pass = moments;
    } else {
      c.cdf_distance = ks_distance(std::move(ca), std::move(cb));
      c.pass = moments && c.cdf_distance < critical;
    }
    r.pass = r.pass && c.pass;
    r.coordinates.push_back(c);
  }
  r.covariance_diff = detail::sample_covariance(a) - detail::sample_covariance(b);
  return r;
}

[[nodiscard]] inline TwoSampleReport two_sample_compare(const std::vector<double> &a,
                                                        const std::vector<double> &b,
                                                        double alpha = 0.01) {
  auto wrap = [](const std::vector<double> &xs) {
    std::vector<Vector> out;
    out.reserve(xs.size());
    for (double v : xs) {
      out.push_back(Vector::Constant(1, v));
    }
    return out;
  };
  return two_sample_compare(wrap(a), wrap(b), alpha);
}

// ---------------------------------------------------------------------------
// Log-log rate fitting
// ---------------------------------------------------------------------------

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double ci_low = 0.0;  ///< two-sided 95% interval
  double ci_high = 0.0;
  double lower_bound_95 = 0.0; ///< one-sided 95% lower confidence bound
  std::size_t points = 0;
};

/// Ordinary least squares of log(ys) on log(xs).
[[nodiscard]] inline RateFit fit_loglog_rate(const std::vector<double> &xs,
                                             const std::vector<double> &ys) {
  require(xs.size() == ys.size(), "fit_loglog_rate: size mismatch");
  require(xs.size() >= 3, "fit_loglog_rate: at least three points required");
  const std::size_t k = xs.size();
  std::vector<double> lx(k), ly(k);
  for (std::size_t i = 0; i < k; ++i) {
    require(xs[i] > 0.0 && ys[i] > 0.0, "fit_loglog_rate: inputs must be positive");
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(ys[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(k);
  my /= static_cast<double>(k);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  require(sxx > 0.0, "fit_loglog_rate: abscissae must not all coincide");
  RateFit f;
  f.points = k;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double e = ly[i] - (f.intercept + f.slope * lx[i]);
    rss += e * e;
  }
  const double dof = static_cast<double>(k) - 2.0;
  f.slope_se = std::sqrt(rss / dof / sxx);
  const double t2 = student_t_quantile(0.975, dof);
  const double t1 = student_t_quantile(0.95, dof);
  f.ci_low = f.slope - t2 * f.slope_se;
  f.ci_high = f.slope + t2 * f.slope_se;
  f.lower_bound_95 = f.slope - t1 * f.slope_se;
  return f;
}

} // namespace slowfast
