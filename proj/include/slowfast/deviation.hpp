#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "slowfast/averaging.hpp"
#include "slowfast/harness.hpp"
#include "slowfast/integrator.hpp"
#include "slowfast/linalg.hpp"
#include "slowfast/model.hpp"

namespace slowfast {

/// Smallest multiple of dt not below T.
[[nodiscard]] inline double whole_steps(double T, double dt) {
  return std::ceil(T / dt - 1e-9) * dt;
}

// ---------------------------------------------------------------------------
// Autocovariance kernel and diffusion matrix
// ---------------------------------------------------------------------------

struct KernelEstimate {
  Vector x;
  std::vector<double> lags;
  std::vector<Matrix> H;      ///< H^{ij}(s) = E[(f_i(s) - fbar_i)(f_j(0) - fbar_j)]
  std::vector<Matrix> stderr_; ///< standard error of every entry
  double S_max = 0.0;
  std::size_t replicas = 0;
  bool widened_stderr = false;

  /// |H(S_max)| within `k` standard errors of zero, entrywise.
  [[nodiscard]] bool decayed(double k = 3.0) const {
    const Matrix &last = H.back();
    const Matrix &se = stderr_.back();
    return ((last.cwiseAbs() - k * se).array() <= 1e-15).all();
  }
};

struct KernelOptions {
  int replicas = 32;
  std::optional<Vector> fbar; ///< known fbar(x); computed when absent
};

/// Lagged covariances of f(x, y(s)) - fbar(x) along the frozen-fast process
/// at x in its stationary regime (reached by burn-in). Each replica yields
/// a time-averaged estimate; standard errors are taken across replicas.
/// Lags must be non-negative multiples of dt.
[[nodiscard]] inline KernelEstimate autocovariance_kernel(const SlowFastModel &m, const Vector &x,
                                                          const std::vector<double> &lags,
                                                          double burn_in, double horizon,
                                                          double dt, Rng &rng,
                                                          const KernelOptions &o = {}) {
  const int n = m.dim();
  require(!lags.empty(), "autocovariance_kernel: no lags");
  require(o.replicas >= 2, "autocovariance_kernel: need at least two replicas");
  std::vector<std::size_t> steps;
  for (double s : lags) {
    require(s >= 0.0, "autocovariance_kernel: lags must be non-negative");
    const double r = s / dt;
    require(std::abs(r - std::round(r)) < 1e-6, "autocovariance_kernel: lags must be multiples of dt");
    steps.push_back(static_cast<std::size_t>(std::llround(r)));
  }
  const double s_max = *std::max_element(lags.begin(), lags.end());
  require(horizon - burn_in >= 50.0 * s_max, "autocovariance_kernel: need horizon - burn_in >= 50 max(lags)");
  const Vector fbar = o.fbar ? *o.fbar : build_averaged_model(m).fbar(x);

  const std::size_t L = lags.size();
  const std::size_t max_lag = *std::max_element(steps.begin(), steps.end());
  const std::size_t ring = max_lag + 1;
  const auto nn = static_cast<std::size_t>(n);

  std::vector<std::vector<double>> estimates; // per replica: L * n * n
  std::vector<double> buf(ring * nn);
  std::vector<double> sums(L * nn * nn);
  std::vector<std::size_t> counts(L);
  Vector fy(n);
  for (int r = 0; r < o.replicas; ++r) {
    Rng sub = rng.split(StreamRole::Replica);
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    std::size_t recorded = 0;
    const bool ok = stream_frozen_fast(
        m, x, m.y0, horizon, dt, sub, [&](std::size_t, double t, const Vector &y) {
          if (t < burn_in) {
            return;
          }
          m.f.eval(x, y, fy);
          const std::size_t slot = recorded % ring;
          double *cur = &buf[slot * nn];
          for (std::size_t i = 0; i < nn; ++i) {
            cur[i] = fy[static_cast<Index>(i)] - fbar[static_cast<Index>(i)];
          }
          for (std::size_t l = 0; l < L; ++l) {
            const std::size_t lag = steps[l];
            if (lag > recorded) {
              continue;
            }
            const double *past = &buf[((recorded - lag) % ring) * nn];
            double *acc = &sums[l * nn * nn];
            for (std::size_t i = 0; i < nn; ++i) {
              for (std::size_t j = 0; j < nn; ++j) {
                acc[i * nn + j] += cur[i] * past[j];
              }
            }
            ++counts[l];
          }
          ++recorded;
        });
    if (!ok) {
      continue;
    }
    std::vector<double> est(L * nn * nn);
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t e = 0; e < nn * nn; ++e) {
        est[l * nn * nn + e] = counts[l] ? sums[l * nn * nn + e] / static_cast<double>(counts[l]) : 0.0;
      }
    }
    estimates.push_back(std::move(est));
  }
  require(estimates.size() >= 2, "autocovariance_kernel: too many diverged replicas");

  KernelEstimate k;
  k.x = x;
  k.lags = lags;
  k.S_max = s_max;
  k.replicas = estimates.size();
  const double R = static_cast<double>(k.replicas);
  double widen = 1.0;
  if (k.replicas < 10) {
    k.widened_stderr = true;
    widen = student_t_quantile(0.975, R - 1.0) / 1.959963984540054;
  }
  for (std::size_t l = 0; l < L; ++l) {
    Matrix mean = Matrix::Zero(n, n), se = Matrix::Zero(n, n);
    for (std::size_t i = 0; i < nn; ++i) {
      for (std::size_t j = 0; j < nn; ++j) {
        double s = 0.0, s2 = 0.0;
        for (const auto &e : estimates) {
          const double v = e[l * nn * nn + i * nn + j];
          s += v;
          s2 += v * v;
        }
        const double mu = s / R;
        const double var = std::max(0.0, (s2 / R - mu * mu) * R / (R - 1.0));
        mean(static_cast<Index>(i), static_cast<Index>(j)) = mu;
        se(static_cast<Index>(i), static_cast<Index>(j)) = widen * std::sqrt(var / R);
      }
    }
    k.H.push_back(mean);
    k.stderr_.push_back(se);
  }
  return k;
}

/// Htilde_{ij} = int_0^{S_max} (H^{ij}(s) + H^{ji}(s)) ds by the trapezoid
/// rule on the lag grid, symmetrized, negative eigenvalues clipped at zero.
[[nodiscard]] inline Matrix diffusion_matrix(const KernelEstimate &k, double decay_k = 3.0) {
  require(k.H.size() == k.lags.size() && !k.H.empty(), "diffusion_matrix: malformed kernel");
  if (!k.decayed(decay_k)) {
    throw ConvergenceError("diffusion_matrix: kernel has not decayed at S_max = " +
                           std::to_string(k.S_max) + " (|H(S_max)| exceeds " +
                           std::to_string(decay_k) + " standard errors)");
  }
  const Index n = k.H.front().rows();
  Matrix acc = Matrix::Zero(n, n);
  for (std::size_t l = 0; l + 1 < k.lags.size(); ++l) {
    const double h = k.lags[l + 1] - k.lags[l];
    require(h > 0.0, "diffusion_matrix: lags must increase");
    const Matrix a = k.H[l] + k.H[l].transpose();
    const Matrix b = k.H[l + 1] + k.H[l + 1].transpose();
    acc += 0.5 * h * (a + b);
  }
  Matrix out = project_psd(acc);
  out = 0.5 * (out + out.transpose());
  // Exact symmetry of the stored result.
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      out(j, i) = out(i, j);
    }
  }
  return out;
}

/// Evenly spaced lags 0, step, ..., s_max.
[[nodiscard]] inline std::vector<double> lag_grid(double s_max, double step) {
  require(step > 0.0 && s_max >= 0.0, "lag_grid: invalid arguments");
  const auto count = static_cast<std::size_t>(std::llround(s_max / step));
  std::vector<double> out;
  for (std::size_t i = 0; i <= count; ++i) {
    out.push_back(static_cast<double>(i) * step);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Derivative of the averaged drift
// ---------------------------------------------------------------------------

/// Central differences of fbar; the step must exceed 1e-8 (1 + |x|) to keep
/// cancellation under control.
[[nodiscard]] inline Matrix fbar_derivative(const AveragedModel &am, const Vector &x,
                                            double fd_step = 1e-5) {
  const int n = am.dim();
  require(x.size() == n, "fbar_derivative: x has wrong dimension");
  if (!(fd_step > 1e-8 * (1.0 + x.cwiseAbs().maxCoeff()))) {
    throw InvalidArgument("fbar_derivative: fd_step too small, cancellation would dominate");
  }
  Matrix D(n, n);
  Vector xp = x, xm = x, fp(n), fm(n);
  for (int j = 0; j < n; ++j) {
    xp[j] = x[j] + fd_step;
    xm[j] = x[j] - fd_step;
    am.fbar.eval(xp, fp);
    am.fbar.eval(xm, fm);
    D.col(j) = (fp - fm) / (2.0 * fd_step);
    xp[j] = xm[j] = x[j];
  }
  return D;
}

// ---------------------------------------------------------------------------
// Deviation model
// ---------------------------------------------------------------------------

/// Htilde(x) and its square root: constant, or tabulated on a tensor grid
/// with square roots cached at the nodes and interpolated multilinearly.
class HtildeField {
public:
  HtildeField() = default;

  static HtildeField constant(const Matrix &H) {
    HtildeField f;
    f.H_.push_back(project_psd(H));
    f.sqrt_.push_back(matrix_sqrt_psd(f.H_.back(), 1e-10));
    return f;
  }

  static HtildeField tabulated(Vector lo, Vector hi, std::vector<int> nodes,
                               std::vector<Matrix> values) {
    HtildeField f;
    f.lo_ = std::move(lo);
    f.hi_ = std::move(hi);
    f.nodes_ = std::move(nodes);
    for (auto &H : values) {
      f.H_.push_back(project_psd(H));
      f.sqrt_.push_back(matrix_sqrt_psd(f.H_.back(), 1e-10));
    }
    return f;
  }

  [[nodiscard]] bool is_constant() const noexcept { return nodes_.empty(); }
  [[nodiscard]] Index dim() const { return H_.empty() ? 0 : H_.front().rows(); }
  [[nodiscard]] const std::vector<Matrix> &node_values() const noexcept { return H_; }

  [[nodiscard]] Matrix H(const Vector &x) const { return interpolate(H_, x); }
  [[nodiscard]] Matrix sqrt_H(const Vector &x) const { return interpolate(sqrt_, x); }
  [[nodiscard]] const Matrix &constant_sqrt() const { return sqrt_.front(); }
  [[nodiscard]] const Matrix &constant_H() const { return H_.front(); }

private:
  [[nodiscard]] Matrix interpolate(const std::vector<Matrix> &vals, const Vector &x) const {
    if (is_constant()) {
      return vals.front();
    }
    FbarTable t;
    t.lo = lo_;
    t.hi = hi_;
    t.nodes = nodes_;
    const Index d = dim();
    t.values.resize(d * d, static_cast<Index>(vals.size()));
    for (std::size_t k = 0; k < vals.size(); ++k) {
      t.values.col(static_cast<Index>(k)) = Eigen::Map<const Vector>(vals[k].data(), d * d);
    }
    Vector out;
    t.interpolate(x, out);
    return Eigen::Map<const Matrix>(out.data(), d, d);
  }

  Vector lo_;
  Vector hi_;
  std::vector<int> nodes_;
  std::vector<Matrix> H_;
  std::vector<Matrix> sqrt_;
};

/// d theta = (A theta + fbar'(x(t)) theta) dt + sqrt(Htilde(x(t))) dw'
/// (with `literal_drift`, the drift is A theta + fbar'(x(t)) 1 instead).
struct DeviationModel {
  Matrix A;
  std::function<Matrix(const Vector &)> fbar_deriv;
  HtildeField htilde;
  bool literal_drift = false;

  [[nodiscard]] int dim() const noexcept { return static_cast<int>(A.rows()); }
};

struct DeviationOptions {
  enum class HtildeMode { ConstantAtPoint, Tabulated, Override };
  HtildeMode mode = HtildeMode::ConstantAtPoint;
  std::optional<Vector> x_ref;    ///< evaluation point for ConstantAtPoint (default x0)
  std::optional<Matrix> override_; ///< analytic Htilde for Override
  double table_half_width = 3.0;
  int table_nodes = 9;
  double lag_max = 4.0;
  double lag_step = 0.05;
  double burn_in = 0.0; ///< 0 selects 10 / gamma_B
  double horizon = 2000.0;
  double dt = 0.005;
  int replicas = 32;
  double fd_step = 1e-5;
  bool literal_drift = false;
  std::uint64_t seed = 0;
};

/// Estimates Htilde at x from the stationary kernel.
[[nodiscard]] inline Matrix estimate_htilde(const SlowFastModel &m, const AveragedModel &am,
                                            const Vector &x, const DeviationOptions &o,
                                            std::uint64_t seed) {
  Rng rng(seed, 0, StreamRole::Auxiliary);
  KernelOptions ko;
  ko.replicas = o.replicas;
  ko.fbar = am.fbar(x);
  const double burn = whole_steps(o.burn_in > 0.0 ? o.burn_in : 10.0 / decay_rates(m).gamma_B, o.dt);
  const KernelEstimate k = autocovariance_kernel(m, x, lag_grid(o.lag_max, o.lag_step), burn,
                                                 burn + whole_steps(o.horizon, o.dt), o.dt, rng, ko);
  return diffusion_matrix(k);
}

[[nodiscard]] inline DeviationModel build_deviation_model(const SlowFastModel &m,
                                                          const AveragedModel &am,
                                                          const DeviationOptions &o = {}) {
  DeviationModel dm;
  dm.A = am.A;
  dm.literal_drift = o.literal_drift;
  const double step = o.fd_step;
  dm.fbar_deriv = [am, step](const Vector &x) { return fbar_derivative(am, x, step); };
  switch (o.mode) {
  case DeviationOptions::HtildeMode::Override:
    require(o.override_.has_value(), "build_deviation_model: override matrix missing");
    dm.htilde = HtildeField::constant(*o.override_);
    break;
  case DeviationOptions::HtildeMode::ConstantAtPoint:
    dm.htilde = HtildeField::constant(estimate_htilde(m, am, o.x_ref.value_or(m.x0), o, o.seed));
    break;
  case DeviationOptions::HtildeMode::Tabulated: {
    const int n = m.dim();
    FbarTable grid;
    grid.lo = Vector::Constant(n, -o.table_half_width);
    grid.hi = Vector::Constant(n, o.table_half_width);
    grid.nodes.assign(static_cast<std::size_t>(n), o.table_nodes);
    std::vector<Matrix> vals;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      vals.push_back(estimate_htilde(m, am, grid.node(k), o, derive_seed(o.seed, k, StreamRole::Auxiliary)));
    }
    dm.htilde = HtildeField::tabulated(grid.lo, grid.hi, grid.nodes, std::move(vals));
    break;
  }
  }
  return dm;
}

namespace detail {
/// Index of the last grid point not after t.
inline std::size_t locate(const std::vector<double> &grid, double t) {
  const auto it = std::upper_bound(grid.begin(), grid.end(), t + 1e-12);
  return it == grid.begin() ? 0 : static_cast<std::size_t>(std::distance(grid.begin(), it) - 1);
}
} // namespace detail

/// Euler-Maruyama for the deviation SDE along the averaged path x_path,
/// theta(0) = 0, independent Brownian motion.
[[nodiscard]] inline Trajectory simulate_deviation(const DeviationModel &dm,
                                                   const Trajectory &x_path, double T, double dt,
                                                   Rng &rng) {
  const int n = dm.dim();
  require(!x_path.grid.empty() && x_path.grid.front() <= 1e-12 &&
              x_path.final_time() >= T - 1e-9,
          "simulate_deviation: x_path must cover [0, T]");
  const auto grid = make_grid(0.0, T, dt);
  Trajectory th = detail::start_trajectory(grid, Vector::Zero(n), "deviation", 0.0);
  Vector theta = Vector::Zero(n), drift(n), z(n);
  const bool constant_h = dm.htilde.is_constant();
  const Matrix S_const = constant_h ? dm.htilde.constant_sqrt() : Matrix();
  const bool noisy = !constant_h || !S_const.isZero(0.0);
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    const double h = grid[k + 1] - grid[k];
    const Vector xk = x_path.states.col(static_cast<Index>(detail::locate(x_path.grid, grid[k])));
    const Matrix D = dm.fbar_deriv(xk);
    drift.noalias() = dm.A * theta;
    if (dm.literal_drift) {
      drift += D * Vector::Ones(n);
    } else {
      drift.noalias() += D * theta;
    }
    theta += drift * h;
    if (noisy) {
      const double sd = std::sqrt(h);
      for (int i = 0; i < n; ++i) {
        z[i] = sd * rng.normal();
      }
      theta.noalias() += (constant_h ? S_const : dm.htilde.sqrt_H(xk)) * z;
    }
    if (!theta.allFinite()) {
      detail::mark_diverged(th, static_cast<Index>(k) + 1);
      return th;
    }
    th.states.col(static_cast<Index>(k) + 1) = theta;
  }
  return th;
}

/// Averaged equation plus the sqrt(eps) deviation correction:
/// dx = (A x + fbar(x)) dt + sigma1 dL + sqrt(eps) sqrt(Htilde(x)) dw'.
/// Slow increments are drawn from `rng` first, so eps = 0 reproduces
/// simulate_averaged on the same seed.
[[nodiscard]] inline Trajectory simulate_corrected(const AveragedModel &am,
                                                   const DeviationModel &dm, double epsilon,
                                                   double T, double dt, Rng &rng) {
  require(epsilon >= 0.0, "simulate_corrected: epsilon must be non-negative");
  const int n = am.dim();
  const auto grid = make_grid(0.0, T, dt);
  const IncrementStream incr = sample_increments(am.slow, grid, rng);
  Rng dev = rng.split(StreamRole::DeviationNoise);
  Trajectory tr = detail::start_trajectory(grid, am.x0, "corrected", epsilon);
  const bool noisy = !am.slow.is_silent();
  const bool corrected = epsilon > 0.0;
  const double scale = std::sqrt(epsilon);
  detail::EulerKernel kx(n);
  Vector x = am.x0, fx(n), z(n);
  for (std::size_t k = 0; k < incr.steps(); ++k) {
    const auto c = static_cast<Index>(k);
    const double h = incr.dt(k);
    am.fbar.eval(x, fx);
    Matrix S;
    if (corrected) {
      S = dm.htilde.sqrt_H(x);
    }
    kx.advance(x, am.A, fx, h, am.slow.sigma, noisy, incr.dW.col(c), incr.dJ.col(c));
    if (corrected) {
      const double sd = std::sqrt(h);
      for (int i = 0; i < n; ++i) {
        z[i] = sd * dev.normal();
      }
      x.noalias() += scale * (S * z);
    }
    if (!x.allFinite()) {
      detail::mark_diverged(tr, c + 1);
      return tr;
    }
    tr.states.col(c + 1) = x;
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Decomposition theta^eps = theta_1 + theta_2
// ---------------------------------------------------------------------------

/// Truncation radius of the theta_1 drift gate (infinite disables it).
struct TruncationSpec {
  double K = std::numeric_limits<double>::infinity();
};

struct DecompositionOptions {
  double burn_in = 0.0;        ///< fast-time burn-in for the stationary start (0: 10 / gamma_B)
  bool start_on_manifold = false; ///< place y0 on the manifold value z(0)
};

/// Jointly simulated processes of the decomposition, all on one grid and
/// driven by the same slow and fast increments:
///   x, y      the slow-fast system;
///   x_h, z    the slow equation driven by the asymptotic-manifold fast
///             process z (fast equation at x_h, started in equilibrium);
///   x_bar     the averaged equation;
///   theta     (x - x_bar) / sqrt(eps), theta1, theta2 as in the split.
struct DecompositionPaths {
  std::vector<double> grid;
  Matrix x, y, x_h, z, x_bar, theta, theta1, theta2;
  bool diverged = false;
  std::optional<std::size_t> exit_step; ///< first step at which |theta1| > K
};

[[nodiscard]] inline DecompositionPaths simulate_decomposition(const SlowFastModel &m,
                                                               const AveragedModel &am,
                                                               double epsilon, TruncationSpec K,
                                                               double T, double dt,
                                                               const StreamFactory &streams,
                                                               const DecompositionOptions &o = {}) {
  require(K.K > 0.0, "truncation radius must be positive");
  const SlowFastModel me = m.with_epsilon(epsilon);
  me.check_well_formed();
  check_fast_step(dt, epsilon);
  const int n = m.dim();
  const auto grid = make_grid(0.0, T, dt);
  Rng rs = streams.stream(StreamRole::SlowNoise);
  Rng rf = streams.stream(StreamRole::FastNoise);
  Rng ri = streams.stream(StreamRole::InitialState);
  const IncrementStream slow = sample_increments(me.slow, grid, rs);
  const IncrementStream fast = rescale_fast(me.fast, epsilon, grid, rf);

  // Equilibrium start of the manifold fast process at x0.
  const double dt_burn = std::min(0.01, dt / epsilon);
  const double burn = whole_steps(o.burn_in > 0.0 ? o.burn_in : 10.0 / decay_rates(me).gamma_B, dt_burn);
  Vector z0 = me.y0;
  stream_frozen_fast(me, me.x0, me.y0, burn, dt_burn, ri,
                     [&](std::size_t, double, const Vector &y) { z0 = y; });

  DecompositionPaths p;
  p.grid = grid;
  const auto P = static_cast<Index>(grid.size());
  for (Matrix *M : {&p.x, &p.y, &p.x_h, &p.z, &p.x_bar, &p.theta, &p.theta1, &p.theta2}) {
    M->resize(n, P);
  }
  Vector x = me.x0, y = o.start_on_manifold ? z0 : me.y0, xh = me.x0, z = z0, xb = me.x0;
  Vector t1 = Vector::Zero(n), t2 = Vector::Zero(n);
  const double rs_eps = 1.0 / std::sqrt(epsilon);
  const Matrix B_eps = me.B / epsilon;
  const bool slow_noisy = !me.slow.is_silent();
  const bool fast_noisy = !me.fast.is_silent();
  detail::EulerKernel k1(n), k2(n), k3(n), k4(n), k5(n);
  Vector fxy(n), gxy(n), fhz(n), ghz(n), fb(n), d1(n), d2(n);
  const Matrix zero = Matrix::Zero(n, n);

  auto store = [&](Index c) {
    p.x.col(c) = x;
    p.y.col(c) = y;
    p.x_h.col(c) = xh;
    p.z.col(c) = z;
    p.x_bar.col(c) = xb;
    p.theta.col(c) = (x - xb) * rs_eps;
    p.theta1.col(c) = t1;
    p.theta2.col(c) = t2;
  };
  store(0);
  for (std::size_t k = 0; k < slow.steps(); ++k) {
    const auto c = static_cast<Index>(k);
    const double h = slow.dt(k);
    me.f.eval(x, y, fxy);
    me.g.eval(x, y, gxy);
    me.f.eval(xh, z, fhz);
    me.g.eval(xh, z, ghz);
    am.fbar.eval(xb, fb);
    // Gate evaluated at the current state: q = 1 on |theta1| <= K.
    const bool gate = t1.norm() <= K.K;
    if (!gate && !p.exit_step) {
      p.exit_step = k;
    }
    d1 = gate ? Vector((fhz - fb) * rs_eps) : Vector::Zero(n);
    d2 = (fxy - fhz) * rs_eps;
    gxy /= epsilon;
    ghz /= epsilon;
    const auto dWs = slow.dW.col(c), dJs = slow.dJ.col(c);
    const auto dWf = fast.dW.col(c), dJf = fast.dJ.col(c);
    k1.advance(x, me.A, fxy, h, me.slow.sigma, slow_noisy, dWs, dJs);
    k2.advance(y, B_eps, gxy, h, me.fast.sigma, fast_noisy, dWf, dJf);
    k3.advance(xh, me.A, fhz, h, me.slow.sigma, slow_noisy, dWs, dJs);
    k4.advance(z, B_eps, ghz, h, me.fast.sigma, fast_noisy, dWf, dJf);
    k5.advance(xb, am.A, fb, h, am.slow.sigma, slow_noisy, dWs, dJs);
    t1 += (me.A * t1 + d1) * h;
    t2 += (me.A * t2 + d2) * h;
    if (!x.allFinite() || !y.allFinite() || !xh.allFinite() || !z.allFinite() ||
        !t1.allFinite() || !t2.allFinite()) {
      p.diverged = true;
      for (Matrix *M : {&p.x, &p.y, &p.x_h, &p.z, &p.x_bar, &p.theta, &p.theta1, &p.theta2}) {
        M->conservativeResize(Eigen::NoChange, c + 1);
      }
      p.grid.resize(static_cast<std::size_t>(c + 1));
      return p;
    }
    store(c + 1);
  }
  return p;
}

/// theta_1^{eps,K} alone.
[[nodiscard]] inline Trajectory simulate_truncated_deviation(const SlowFastModel &m,
                                                             const AveragedModel &am,
                                                             double epsilon, TruncationSpec K,
                                                             double T, double dt,
                                                             const StreamFactory &streams) {
  const DecompositionPaths p = simulate_decomposition(m, am, epsilon, K, T, dt, streams);
  Trajectory tr;
  tr.grid = p.grid;
  tr.states = p.theta1;
  tr.tag = "theta1";
  tr.epsilon = epsilon;
  tr.diverged = p.diverged;
  return tr;
}

struct ResidualEstimate {
  double epsilon = 0.0;
  double mean = 0.0; ///< E sup |theta_2|^2
  double standard_error = 0.0;
  std::size_t paths = 0;
  std::size_t diverged = 0;
};

/// Monte-Carlo E sup_{t<=T} |theta_2^eps(t)|^2.
[[nodiscard]] inline ResidualEstimate residual_theta2(const SlowFastModel &m,
                                                      const AveragedModel &am, double epsilon,
                                                      double T, double dt, int N,
                                                      std::uint64_t master_seed,
                                                      unsigned workers = 1,
                                                      const DecompositionOptions &o = {}) {
  const EnsembleTask task = [&](const StreamFactory &sf) -> std::optional<Vector> {
    const DecompositionPaths p = simulate_decomposition(m, am, epsilon, {}, T, dt, sf, o);
    if (p.diverged) {
      return std::nullopt;
    }
    return Vector::Constant(1, p.theta2.colwise().squaredNorm().maxCoeff());
  };
  const Ensemble e = run_ensemble("residual_theta2", task, static_cast<std::size_t>(N),
                                  master_seed, workers);
  const SampleStats s = summarize(e.column(0));
  return {epsilon, s.mean, s.se_mean, e.outputs.size(), e.diverged};
}

} // namespace slowfast
