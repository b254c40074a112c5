#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "slowfast/model.hpp"
#include "slowfast/rng.hpp"
#include "slowfast/types.hpp"

namespace slowfast {

/// A single jump of the compound Poisson component. `mark` is an independent
/// Uniform(0, 1) label used to thin the jump sequence to a lower intensity.
struct JumpEvent {
  double time = 0.0;
  std::size_t step = 0;
  Vector size;
  double mark = 0.0;
};

/// Per-step increments of a Levy path on a time grid. Increments are raw
/// (unit amplitude): the Brownian part dW, and the compensated jump part dJ.
struct IncrementStream {
  std::vector<double> grid; ///< t_0 < t_1 < ... < t_M
  Matrix dW;                ///< n x M
  Matrix dJ;                ///< n x M
  std::vector<JumpEvent> jump_events;

  [[nodiscard]] std::size_t steps() const noexcept {
    return grid.empty() ? 0 : grid.size() - 1;
  }
  [[nodiscard]] int dim() const noexcept { return static_cast<int>(dW.rows()); }
  [[nodiscard]] double dt(std::size_t k) const { return grid[k + 1] - grid[k]; }

  /// Total increment dL over step k.
  [[nodiscard]] Vector increment(std::size_t k) const {
    return dW.col(static_cast<Index>(k)) + dJ.col(static_cast<Index>(k));
  }

  /// Path values L(t_k) - L(t_0), k = 0..M.
  [[nodiscard]] Matrix cumulative() const {
    Matrix out = Matrix::Zero(dW.rows(), static_cast<Index>(grid.size()));
    for (std::size_t k = 0; k < steps(); ++k) {
      const auto c = static_cast<Index>(k);
      out.col(c + 1) = out.col(c) + dW.col(c) + dJ.col(c);
    }
    return out;
  }

  /// Merges consecutive steps pairwise; the coarse stream carries the same
  /// path on every other grid point.
  [[nodiscard]] IncrementStream coarsen() const {
    IncrementStream c;
    const std::size_t m = steps() / 2;
    c.grid.reserve(m + 1);
    for (std::size_t k = 0; k <= m; ++k) {
      c.grid.push_back(grid[2 * k]);
    }
    c.dW = Matrix::Zero(dW.rows(), static_cast<Index>(m));
    c.dJ = Matrix::Zero(dJ.rows(), static_cast<Index>(m));
    for (std::size_t k = 0; k < m; ++k) {
      const auto i = static_cast<Index>(2 * k);
      c.dW.col(static_cast<Index>(k)) = dW.col(i) + dW.col(i + 1);
      c.dJ.col(static_cast<Index>(k)) = dJ.col(i) + dJ.col(i + 1);
    }
    for (const auto &e : jump_events) {
      if (e.step / 2 < m) {
        JumpEvent ce = e;
        ce.step = e.step / 2;
        c.jump_events.push_back(ce);
      }
    }
    return c;
  }
};

/// Uniform grid t0, t0 + dt, ..., ending exactly at t1 (the last step is
/// shortened when (t1 - t0) / dt is not an integer).
[[nodiscard]] inline std::vector<double> make_grid(double t0, double t1, double dt) {
  require(dt > 0.0 && std::isfinite(dt), "grid step must be positive");
  require(t1 >= t0, "grid end must not precede grid start");
  const double span = t1 - t0;
  const double ratio = span / dt;
  auto m = static_cast<std::size_t>(std::llround(ratio));
  if (std::abs(ratio - static_cast<double>(m)) > 1e-9 * std::max(1.0, ratio)) {
    m = static_cast<std::size_t>(std::ceil(ratio));
  }
  std::vector<double> g(m + 1);
  for (std::size_t k = 0; k <= m; ++k) {
    g[k] = t0 + static_cast<double>(k) * dt;
  }
  g[m] = t1;
  return g;
}

namespace detail {

inline void check_grid(const std::vector<double> &grid) {
  if (grid.empty()) {
    throw InvalidArgument("increment grid is empty");
  }
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    if (!(grid[k + 1] > grid[k])) {
      throw InvalidArgument("increment grid must be strictly increasing");
    }
  }
}

/// Brownian increments with variance var_scale * dt per coordinate and
/// compound Poisson jumps at rate rate_scale * lambda, compensated per step.
inline IncrementStream sample_levy(const NoiseSpec &spec, const std::vector<double> &grid,
                                   double var_scale, double rate_scale, Rng &rng) {
  check_grid(grid);
  const int n = static_cast<int>(spec.sigma.rows());
  IncrementStream s;
  s.grid = grid;
  const auto m = static_cast<Index>(s.steps());
  s.dW = Matrix::Zero(n, m);
  s.dJ = Matrix::Zero(n, m);
  if (spec.is_silent()) {
    return s;
  }
  for (Index k = 0; k < m; ++k) {
    const double sd = std::sqrt(var_scale * (grid[k + 1] - grid[k]));
    for (int i = 0; i < n; ++i) {
      s.dW(i, k) = sd * rng.normal();
    }
  }
  const JumpSpec &jumps = spec.jumps;
  if (!jumps.active() || m == 0) {
    return s;
  }
  const double rate = jumps.intensity * rate_scale;
  const double t_end = grid.back();
  double t = grid.front();
  for (;;) {
    t += rng.exponential(rate);
    if (!(t < t_end)) {
      break;
    }
    const auto it = std::upper_bound(grid.begin(), grid.end(), t);
    const auto k = static_cast<std::size_t>(std::distance(grid.begin(), it) - 1);
    JumpEvent e;
    e.time = t;
    e.step = k;
    e.size = jumps.sample(n, rng);
    e.mark = rng.uniform();
    s.dJ.col(static_cast<Index>(k)) += e.size;
    s.jump_events.push_back(std::move(e));
  }
  const Vector mean = jumps.mean(n);
  for (Index k = 0; k < m; ++k) {
    s.dJ.col(k) -= rate * (grid[k + 1] - grid[k]) * mean;
  }
  return s;
}

} // namespace detail

/// Increments of L = w + compensated compound Poisson on `grid`. A silent
/// spec (sigma = 0) yields zero increments without consuming randomness.
[[nodiscard]] inline IncrementStream sample_increments(const NoiseSpec &spec,
                                                       const std::vector<double> &grid,
                                                       Rng &rng) {
  return detail::sample_levy(spec, grid, 1.0, 1.0, rng);
}

/// Increments of the fast-time noise L_1^{1/eps}: Brownian variance dt/eps,
/// jump intensity lambda/eps, compensator at rate lambda/eps.
[[nodiscard]] inline IncrementStream rescale_fast(const NoiseSpec &spec, double epsilon,
                                                  const std::vector<double> &grid, Rng &rng) {
  if (!(epsilon > 0.0)) {
    throw InvalidArgument("rescale_fast: epsilon must be positive");
  }
  return detail::sample_levy(spec, grid, 1.0 / epsilon, 1.0 / epsilon, rng);
}

/// Independent increment streams on [-T_neg, 0] and [0, T]; the path is
/// anchored at L(0) = 0.
struct TwoSidedPath {
  IncrementStream negative;
  IncrementStream positive;

  /// Path values on the joined grid [-T_neg, T], zero at t = 0.
  [[nodiscard]] std::pair<std::vector<double>, Matrix> values() const {
    const Matrix neg = negative.cumulative();
    const Matrix pos = positive.cumulative();
    const Index nn = neg.cols();
    const Index np = pos.cols();
    std::vector<double> times(negative.grid.begin(), negative.grid.end());
    times.insert(times.end(), positive.grid.begin() + 1, positive.grid.end());
    Matrix v(neg.rows(), nn + np - 1);
    // Shift so that the value at the last negative grid point (t = 0) is 0.
    for (Index k = 0; k < nn; ++k) {
      v.col(k) = neg.col(k) - neg.col(nn - 1);
    }
    for (Index k = 1; k < np; ++k) {
      v.col(nn + k - 1) = pos.col(k);
    }
    return {std::move(times), std::move(v)};
  }
};

[[nodiscard]] inline TwoSidedPath sample_two_sided(const NoiseSpec &spec, double T_neg,
                                                   double T, double grid_step, Rng &rng,
                                                   double var_scale = 1.0,
                                                   double rate_scale = 1.0) {
  if (T_neg < 0.0 || T < 0.0) {
    throw InvalidArgument("sample_two_sided: horizons must be non-negative");
  }
  TwoSidedPath p;
  p.negative = detail::sample_levy(spec, make_grid(-T_neg, 0.0, grid_step), var_scale,
                                   rate_scale, rng);
  p.positive =
      detail::sample_levy(spec, make_grid(0.0, T, grid_step), var_scale, rate_scale, rng);
  return p;
}

} // namespace slowfast
