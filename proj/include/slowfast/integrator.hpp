#pragma once

#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "slowfast/model.hpp"
#include "slowfast/noise.hpp"
#include "slowfast/types.hpp"

namespace slowfast {

/// One realized path of a simulated process.
struct Trajectory {
  std::vector<double> grid;
  Matrix states; ///< n x (number of computed grid points)
  std::string tag;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  bool diverged = false;

  [[nodiscard]] Index points() const noexcept { return states.cols(); }
  [[nodiscard]] Vector state(Index k) const { return states.col(k); }
  [[nodiscard]] Vector final_state() const { return states.col(states.cols() - 1); }
  [[nodiscard]] double final_time() const { return grid[static_cast<std::size_t>(points() - 1)]; }
};

/// One explicit Euler-Maruyama step with additive Levy noise:
/// state + (linear * state + nonlinear) * dt + sigma * (dW + dJ).
[[nodiscard]] inline Vector step(const Vector &state, const Matrix &linear,
                                 const Vector &nonlinear, const Matrix &sigma, double dt,
                                 const Vector &dW, const Vector &dJ) {
  require(dt > 0.0, "step: dt must be positive");
  Vector next = state + (linear * state + nonlinear) * dt + sigma * (dW + dJ);
  if (!next.allFinite()) {
    throw Diverged("step produced a non-finite state");
  }
  return next;
}

namespace detail {

/// Allocation-free in-place variant of step(): x += (L x + nl) dt + S dL.
struct EulerKernel {
  explicit EulerKernel(int n) : tmp(n), noise(n) {}

  void advance(Vector &x, const Matrix &L, const Vector &nl, double dt, const Matrix &S,
               bool noisy, const Eigen::Ref<const Vector> &dW,
               const Eigen::Ref<const Vector> &dJ) {
    tmp.noalias() = L * x;
    tmp += nl;
    if (noisy) {
      noise = dW + dJ;
      x.noalias() += S * noise;
    }
    x += dt * tmp;
  }

  Vector tmp;
  Vector noise;
};

inline double max_step(const std::vector<double> &grid) {
  double h = 0.0;
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    h = std::max(h, grid[k + 1] - grid[k]);
  }
  return h;
}

inline void check_matching_grids(const IncrementStream &a, const IncrementStream &b) {
  if (a.grid != b.grid) {
    throw InvalidArgument("increment streams must share the same grid");
  }
}

inline Trajectory start_trajectory(const std::vector<double> &grid, const Vector &x0,
                                   std::string tag, double eps) {
  Trajectory tr;
  tr.grid = grid;
  tr.states.resize(x0.size(), static_cast<Index>(grid.size()));
  tr.states.col(0) = x0;
  tr.tag = std::move(tag);
  tr.epsilon = eps;
  return tr;
}

inline void mark_diverged(Trajectory &tr, Index computed) {
  tr.diverged = true;
  tr.states.conservativeResize(Eigen::NoChange, computed);
}

} // namespace detail

/// Fast-stability guard of the explicit scheme: dt <= eps / 10.
inline void check_fast_step(double dt, double epsilon) {
  if (dt > epsilon / 10.0 * (1.0 + 1e-12)) {
    throw StabilityError("time step " + std::to_string(dt) +
                         " exceeds the fast stability limit eps/10 = " +
                         std::to_string(epsilon / 10.0));
  }
}

/// Coupled slow-fast simulation on prescribed increments. `slow` carries
/// dL, `fast` carries dL_1^{1/eps} (already rescaled).
[[nodiscard]] inline std::pair<Trajectory, Trajectory>
simulate_slow_fast(const SlowFastModel &m, const IncrementStream &slow,
                   const IncrementStream &fast) {
  m.check_well_formed();
  require_hurwitz(m);
  detail::check_matching_grids(slow, fast);
  check_fast_step(detail::max_step(slow.grid), m.epsilon);

  const int n = m.dim();
  Trajectory xs = detail::start_trajectory(slow.grid, m.x0, "slow", m.epsilon);
  Trajectory ys = detail::start_trajectory(slow.grid, m.y0, "fast", m.epsilon);
  const Matrix B_eps = m.B / m.epsilon;
  const bool slow_noisy = !m.slow.is_silent();
  const bool fast_noisy = !m.fast.is_silent();
  detail::EulerKernel kx(n), ky(n);
  Vector x = m.x0, y = m.y0, fx(n), gy(n);

  const std::size_t M = slow.steps();
  for (std::size_t k = 0; k < M; ++k) {
    const double dt = slow.dt(k);
    const auto c = static_cast<Index>(k);
    m.f.eval(x, y, fx);
    m.g.eval(x, y, gy);
    gy /= m.epsilon;
    kx.advance(x, m.A, fx, dt, m.slow.sigma, slow_noisy, slow.dW.col(c), slow.dJ.col(c));
    ky.advance(y, B_eps, gy, dt, m.fast.sigma, fast_noisy, fast.dW.col(c), fast.dJ.col(c));
    if (!x.allFinite() || !y.allFinite()) {
      detail::mark_diverged(xs, c + 1);
      detail::mark_diverged(ys, c + 1);
      return {std::move(xs), std::move(ys)};
    }
    xs.states.col(c + 1) = x;
    ys.states.col(c + 1) = y;
  }
  return {std::move(xs), std::move(ys)};
}

/// Coupled slow-fast simulation on [0, T] with freshly sampled noise.
[[nodiscard]] inline std::pair<Trajectory, Trajectory>
simulate_slow_fast(const SlowFastModel &m, double T, double dt, Rng &rng) {
  m.check_well_formed();
  check_fast_step(dt, m.epsilon);
  const auto grid = make_grid(0.0, T, dt);
  const IncrementStream slow = sample_increments(m.slow, grid, rng);
  const IncrementStream fast = rescale_fast(m.fast, m.epsilon, grid, rng);
  return simulate_slow_fast(m, slow, fast);
}

/// Fast equation with the slow state frozen at `x_frozen`, in its own
/// timescale: dy = (B y + g(x_frozen, y)) dt + sigma2 dL_1.
[[nodiscard]] inline Trajectory simulate_frozen_fast(const SlowFastModel &m,
                                                     const Vector &x_frozen, const Vector &y0,
                                                     const IncrementStream &incr) {
  const int n = m.dim();
  require(x_frozen.size() == n && y0.size() == n, "frozen-fast: state dimension mismatch");
  Trajectory ys = detail::start_trajectory(incr.grid, y0, "frozen_fast", 1.0);
  const bool noisy = !m.fast.is_silent();
  detail::EulerKernel ky(n);
  Vector y = y0, gy(n);
  for (std::size_t k = 0; k < incr.steps(); ++k) {
    const auto c = static_cast<Index>(k);
    m.g.eval(x_frozen, y, gy);
    ky.advance(y, m.B, gy, incr.dt(k), m.fast.sigma, noisy, incr.dW.col(c), incr.dJ.col(c));
    if (!y.allFinite()) {
      detail::mark_diverged(ys, c + 1);
      return ys;
    }
    ys.states.col(c + 1) = y;
  }
  return ys;
}

[[nodiscard]] inline Trajectory simulate_frozen_fast(const SlowFastModel &m,
                                                     const Vector &x_frozen, const Vector &y0,
                                                     double T, double dt, Rng &rng) {
  const IncrementStream incr = sample_increments(m.fast, make_grid(0.0, T, dt), rng);
  return simulate_frozen_fast(m, x_frozen, y0, incr);
}

/// Streams the frozen-fast process without storing it: visitor(k, t_k, y_k)
/// is called for k = 0..steps. Returns false if the path diverged.
template <class Visitor>
bool stream_frozen_fast(const SlowFastModel &m, const Vector &x_frozen, const Vector &y0,
                        double T, double dt, Rng &rng, Visitor &&visitor) {
  const int n = m.dim();
  const auto grid = make_grid(0.0, T, dt);
  const bool noisy = !m.fast.is_silent();
  const JumpSpec &jumps = m.fast.jumps;
  const bool jumping = noisy && jumps.active();
  const Vector jump_mean = jumps.mean(n);
  detail::EulerKernel ky(n);
  Vector y = y0, gy(n), dW = Vector::Zero(n), dJ = Vector::Zero(n);
  double next_jump = jumping ? rng.exponential(jumps.intensity) : 0.0;

  visitor(std::size_t{0}, grid[0], static_cast<const Vector &>(y));
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    const double h = grid[k + 1] - grid[k];
    if (noisy) {
      const double sd = std::sqrt(h);
      for (int i = 0; i < n; ++i) {
        dW[i] = sd * rng.normal();
      }
    }
    if (jumping) {
      dJ = -jumps.intensity * h * jump_mean;
      while (next_jump < grid[k + 1]) {
        dJ += jumps.sample(n, rng);
        next_jump += rng.exponential(jumps.intensity);
      }
    }
    m.g.eval(x_frozen, y, gy);
    ky.advance(y, m.B, gy, h, m.fast.sigma, noisy, dW, dJ);
    if (!y.allFinite()) {
      return false;
    }
    visitor(k + 1, grid[k + 1], static_cast<const Vector &>(y));
  }
  return true;
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

namespace detail {
inline void write_num(std::ostream &os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}
} // namespace detail

/// Header `t,<prefix>1..<prefix>n`, one row per grid point, 17 significant digits.
inline void write_csv(std::ostream &os, const Trajectory &tr, char prefix) {
  os << 't';
  for (Index i = 0; i < tr.states.rows(); ++i) {
    os << ',' << prefix << (i + 1);
  }
  os << '\n';
  for (Index k = 0; k < tr.points(); ++k) {
    detail::write_num(os, tr.grid[static_cast<std::size_t>(k)]);
    for (Index i = 0; i < tr.states.rows(); ++i) {
      os << ',';
      detail::write_num(os, tr.states(i, k));
    }
    os << '\n';
  }
}

/// Joint slow/fast table: `t,x1..xn,y1..yn`.
inline void write_csv(std::ostream &os, const Trajectory &x, const Trajectory &y) {
  require(x.points() == y.points(), "write_csv: trajectories differ in length");
  os << 't';
  for (Index i = 0; i < x.states.rows(); ++i) {
    os << ",x" << (i + 1);
  }
  for (Index i = 0; i < y.states.rows(); ++i) {
    os << ",y" << (i + 1);
  }
  os << '\n';
  for (Index k = 0; k < x.points(); ++k) {
    detail::write_num(os, x.grid[static_cast<std::size_t>(k)]);
    for (Index i = 0; i < x.states.rows(); ++i) {
      os << ',';
      detail::write_num(os, x.states(i, k));
    }
    for (Index i = 0; i < y.states.rows(); ++i) {
      os << ',';
      detail::write_num(os, y.states(i, k));
    }
    os << '\n';
  }
}

} // namespace slowfast
