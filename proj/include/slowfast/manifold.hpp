#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "slowfast/averaging.hpp"
#include "slowfast/linalg.hpp"
#include "slowfast/model.hpp"
#include "slowfast/noise.hpp"

namespace slowfast {

// ---------------------------------------------------------------------------
// Stationary solutions of the linear Levy-driven equations
// ---------------------------------------------------------------------------

/// Which stationary process is being realized:
///   EtaEps:       d eta = eps A eta dt + sigma1 dL^eps  (dL^eps = sqrt(eps) dw + jumps at rate eps lambda)
///   Xi:           d xi  = B xi dt + sigma2 dL_1
///   XiFastScaled: d xi  = (B / eps) xi dt + sigma2 dL_1^{1/eps}
enum class StationaryKind { EtaEps, Xi, XiFastScaled };

[[nodiscard]] inline const char *to_string(StationaryKind k) {
  switch (k) {
  case StationaryKind::EtaEps: return "eta_eps";
  case StationaryKind::Xi: return "xi";
  case StationaryKind::XiFastScaled: return "xi_fast_scaled";
  }
  return "?";
}

struct StationarySolutionSpec {
  StationaryKind which = StationaryKind::Xi;
  Matrix matrix; ///< drift matrix M of the linear equation (eps A, B or B / eps)
  NoiseSpec noise;
  double epsilon = 1.0;
  double T_neg = 0.0;
  double step = 0.01;

  /// Brownian variance and jump-rate multipliers of the driving noise.
  [[nodiscard]] std::pair<double, double> scales() const {
    switch (which) {
    case StationaryKind::EtaEps: return {epsilon, epsilon};
    case StationaryKind::Xi: return {1.0, 1.0};
    case StationaryKind::XiFastScaled: return {1.0 / epsilon, 1.0 / epsilon};
    }
    return {1.0, 1.0};
  }
};

/// Spec for one of the model's stationary processes; T_neg defaults to ten
/// decay times of the drift matrix.
[[nodiscard]] inline StationarySolutionSpec
make_stationary_spec(const SlowFastModel &m, StationaryKind which, double epsilon,
                     std::optional<double> T_neg = std::nullopt, double step = 0.01) {
  require(epsilon > 0.0, "stationary spec: epsilon must be positive");
  StationarySolutionSpec s;
  s.which = which;
  s.epsilon = epsilon;
  s.step = step;
  switch (which) {
  case StationaryKind::EtaEps:
    s.matrix = epsilon * m.A;
    s.noise = m.slow;
    break;
  case StationaryKind::Xi:
    s.matrix = m.B;
    s.noise = m.fast;
    break;
  case StationaryKind::XiFastScaled:
    s.matrix = m.B / epsilon;
    s.noise = m.fast;
    break;
  }
  const double decay = -spectral_abscissa(s.matrix);
  s.T_neg = T_neg.value_or(decay > 0.0 ? 10.0 / decay : 0.0);
  return s;
}

struct StationaryPath {
  std::vector<double> grid; ///< -T_neg .. 0
  Matrix path;              ///< n x grid.size()
  Vector value;             ///< value at t = 0
};

namespace detail {

/// One-step recursion for x(t) = int_{t0}^t e^{M(t-s)} sigma dL(s):
/// x_{k+1} = e^{Mh} x_k + e^{Mh/2} sigma dL_k (increment placed at the
/// step midpoint).
inline Matrix stationary_recursion(const Matrix &M, const Matrix &sigma, const Matrix &dW,
                                   const Matrix &dJ, double h, const Vector &start) {
  const Index n = M.rows();
  const Matrix E = expm(M * h);
  const Matrix Ehalf_sigma = expm(M * (0.5 * h)) * sigma;
  Matrix out(n, dW.cols() + 1);
  out.col(0) = start;
  Vector x = start, dl(n);
  for (Index k = 0; k < dW.cols(); ++k) {
    dl = dW.col(k) + dJ.col(k);
    x = E * x + Ehalf_sigma * dl;
    out.col(k + 1) = x;
  }
  return out;
}

inline void check_stationary_matrix(const Matrix &M) {
  if (!is_hurwitz(M)) {
    throw AssumptionViolation(
        "stationary convolution diverges: drift matrix has an eigenvalue with "
        "non-negative real part");
  }
}

} // namespace detail

/// Truncated stochastic convolution int_{-T_neg}^0 e^{-M s} sigma dL(s) and
/// its running values on [-T_neg, 0].
[[nodiscard]] inline StationaryPath stationary_solution(const StationarySolutionSpec &spec,
                                                        Rng &rng) {
  detail::check_stationary_matrix(spec.matrix);
  const double decay = -spectral_abscissa(spec.matrix);
  if (spec.T_neg < 5.0 / decay * (1.0 - 1e-12)) {
    throw InvalidArgument("stationary_solution: T_neg must be at least 5 / decay rate = " +
                          std::to_string(5.0 / decay));
  }
  require(spec.step > 0.0, "stationary_solution: step must be positive");
  const auto [var_scale, rate_scale] = spec.scales();
  const auto grid = make_grid(-spec.T_neg, 0.0, spec.step);
  const IncrementStream incr = detail::sample_levy(spec.noise, grid, var_scale, rate_scale, rng);
  StationaryPath out;
  out.grid = grid;
  const Index n = spec.matrix.rows();
  if (spec.noise.is_silent()) {
    out.path = Matrix::Zero(n, static_cast<Index>(grid.size()));
  } else {
    out.path = detail::stationary_recursion(spec.matrix, spec.noise.sigma, incr.dW, incr.dJ,
                                            spec.step, Vector::Zero(n));
  }
  out.value = out.path.col(out.path.cols() - 1);
  return out;
}

// ---------------------------------------------------------------------------
// Frozen noise realization for manifold computations
// ---------------------------------------------------------------------------

/// One realization omega of the two driving noises on an index-aligned grid
/// t_k = (k - zero) * step covering [-(T_neg + burn), T_fwd]. The fast
/// stationary process xi is precomputed; eta^eps is derived per eps by
/// thinning the raw slow jumps.
struct ManifoldNoise {
  double step = 0.01;
  Index zero = 0;  ///< index of t = 0
  Index first = 0; ///< index of t = -T_neg (start of the usable window)
  std::vector<double> grid;
  IncrementStream slow; ///< unit-scale slow increments (Brownian var dt, jump rate lambda)
  IncrementStream fast; ///< unit-scale fast increments
  Matrix xi;            ///< n x grid.size()
  Vector eta_seed;      ///< standard normal draw used to start eta^eps in equilibrium

  [[nodiscard]] double T_neg() const { return -grid[static_cast<std::size_t>(first)]; }
  [[nodiscard]] double T_fwd() const { return grid.back(); }
  [[nodiscard]] Index size() const { return static_cast<Index>(grid.size()); }
};

[[nodiscard]] inline ManifoldNoise sample_manifold_noise(const SlowFastModel &m, double T_neg,
                                                         double T_fwd, double step, Rng &rng,
                                                         std::optional<double> burn = std::nullopt) {
  require(T_neg >= 0.0 && T_fwd >= 0.0, "manifold noise: horizons must be non-negative");
  require(step > 0.0, "manifold noise: step must be positive");
  detail::check_stationary_matrix(m.B);
  const double gamma_B = -spectral_abscissa(m.B);
  const auto n_neg = static_cast<Index>(std::llround(T_neg / step));
  const auto n_burn = static_cast<Index>(std::ceil(burn.value_or(10.0 / gamma_B) / step));
  const auto n_pos = static_cast<Index>(std::llround(T_fwd / step));
  ManifoldNoise w;
  w.step = step;
  w.zero = n_burn + n_neg;
  w.first = n_burn;
  const Index total = w.zero + n_pos + 1;
  w.grid.resize(static_cast<std::size_t>(total));
  for (Index k = 0; k < total; ++k) {
    w.grid[static_cast<std::size_t>(k)] = static_cast<double>(k - w.zero) * step;
  }
  w.slow = detail::sample_levy(m.slow, w.grid, 1.0, 1.0, rng);
  w.fast = detail::sample_levy(m.fast, w.grid, 1.0, 1.0, rng);
  const int n = m.dim();
  w.eta_seed.resize(n);
  for (int i = 0; i < n; ++i) {
    w.eta_seed[i] = rng.normal();
  }
  if (m.fast.is_silent()) {
    w.xi = Matrix::Zero(n, total);
  } else {
    w.xi = detail::stationary_recursion(m.B, m.fast.sigma, w.fast.dW, w.fast.dJ, step,
                                        Vector::Zero(n));
  }
  return w;
}

/// eta^eps on the noise grid. The Brownian part is scaled by sqrt(eps) and
/// slow jumps are kept when their mark is below eps (rate eps lambda); the
/// path starts from a Gaussian draw with the stationary covariance, which
/// does not depend on eps.
[[nodiscard]] inline Matrix eta_path(const ManifoldNoise &w, const SlowFastModel &m,
                                     double epsilon) {
  const int n = m.dim();
  if (m.slow.is_silent() || epsilon == 0.0) {
    return Matrix::Zero(n, w.size());
  }
  require(epsilon > 0.0 && epsilon <= 1.0, "eta_path: epsilon must lie in (0, 1]");
  const Matrix dW = std::sqrt(epsilon) * w.slow.dW;
  Matrix dJ = Matrix::Zero(n, w.slow.dJ.cols());
  Matrix noise_cov = m.slow.sigma * m.slow.sigma.transpose();
  if (m.slow.jumps.active()) {
    const Vector mean = m.slow.jumps.mean(n);
    for (const auto &e : w.slow.jump_events) {
      if (e.mark < epsilon) {
        dJ.col(static_cast<Index>(e.step)) += e.size;
      }
    }
    for (Index k = 0; k < dJ.cols(); ++k) {
      dJ.col(k) -= epsilon * m.slow.jumps.intensity * w.slow.dt(static_cast<std::size_t>(k)) * mean;
    }
    // Second moment of the compensated jumps enters the stationary covariance.
    Rng probe(0x5eedULL, 0, StreamRole::Probe);
    Matrix second = Matrix::Zero(n, n);
    constexpr int samples = 4096;
    for (int s = 0; s < samples; ++s) {
      const Vector z = m.slow.jumps.sample(n, probe);
      second += z * z.transpose();
    }
    second /= samples;
    noise_cov += m.slow.jumps.intensity * m.slow.sigma * second * m.slow.sigma.transpose();
  }
  // Var of eta^eps solves (eps A) S + S (eps A)^T + eps Q = 0, i.e. A S + S A^T + Q = 0.
  const Matrix S = solve_lyapunov(m.A, noise_cov);
  const Vector start = matrix_sqrt_psd(0.5 * (S + S.transpose()), 1e-8) * w.eta_seed;
  return detail::stationary_recursion(epsilon * m.A, m.slow.sigma, dW, dJ, w.step, start);
}

// ---------------------------------------------------------------------------
// Contraction factors
// ---------------------------------------------------------------------------

struct ContractionFactors {
  double gamma = 0.0;
  double rho = 0.0;
  double rho_hat = 0.0;
  double L_h = 0.0; ///< Lipschitz constant of the manifold graph
  [[nodiscard]] bool contracting() const noexcept { return rho < 1.0; }
};

/// rho = eps L_f / (gamma - eps gamma_A') + L_g / (gamma_B - gamma),
/// L_h = L_g / ((gamma_B - gamma)(1 - rho)),
/// rho_hat = rho + eps L_g L_h / (gamma - eps gamma_A').
[[nodiscard]] inline ContractionFactors contraction_factors(double L_f, double L_g,
                                                            const DecayRates &rates,
                                                            double epsilon, double gamma) {
  require(epsilon >= 0.0, "contraction_factors: epsilon must be non-negative");
  const double lo = epsilon * rates.gamma_A_prime;
  const double hi = rates.gamma_B - L_g;
  if (!(gamma > lo && gamma < hi)) {
    throw InvalidArgument("gamma = " + std::to_string(gamma) + " outside the admissible band (" +
                          std::to_string(lo) + ", " + std::to_string(hi) + ")");
  }
  ContractionFactors c;
  c.gamma = gamma;
  const double slow_gap = gamma - epsilon * rates.gamma_A_prime;
  c.rho = epsilon * L_f / slow_gap + L_g / (rates.gamma_B - gamma);
  c.L_h = c.rho < 1.0 ? L_g / ((rates.gamma_B - gamma) * (1.0 - c.rho))
                      : std::numeric_limits<double>::infinity();
  c.rho_hat = c.rho + epsilon * L_g * c.L_h / slow_gap;
  return c;
}

/// Centre of the band for eps -> 0: (gamma_B - L_g) / 2.
[[nodiscard]] inline double default_gamma(const SlowFastModel &m) {
  return 0.5 * (decay_rates(m).gamma_B - resolved_lipschitz(m.g));
}

[[nodiscard]] inline ContractionFactors contraction_factors(const SlowFastModel &m,
                                                            double epsilon, double gamma) {
  return contraction_factors(resolved_lipschitz(m.f), resolved_lipschitz(m.g), decay_rates(m),
                             epsilon, gamma);
}

// ---------------------------------------------------------------------------
// Lyapunov-Perron solver
// ---------------------------------------------------------------------------

struct LyapunovPerronOptions {
  std::optional<double> gamma; ///< default (gamma_B - L_g) / 2
  double grid_step = 0.01;
  std::optional<double> T_neg; ///< default 30 / gamma_B
  double tol = 1e-10;
  int max_iter = 500;
};

struct ManifoldSolution {
  double epsilon = 0.0;
  Vector u0;
  double gamma = 0.0;
  std::vector<double> grid; ///< -T_neg .. 0
  Matrix u;                 ///< n x grid.size()
  Matrix v;
  Vector h_value; ///< v(0)
  double rho = 0.0;
  double rho_hat = 0.0;
  double L_h = 0.0;
  int iterations = 0;
  std::vector<double> residuals; ///< weighted sup-norm change per sweep

  /// Largest ratio of consecutive residuals among those above `floor`.
  [[nodiscard]] double max_residual_ratio(double floor = 1e-13) const {
    double worst = 0.0;
    for (std::size_t k = 1; k < residuals.size(); ++k) {
      if (residuals[k - 1] > floor && residuals[k] > floor) {
        worst = std::max(worst, residuals[k] / residuals[k - 1]);
      }
    }
    return worst;
  }
};

namespace detail {

/// The Lyapunov-Perron operator K^eps discretized on the window [-T_neg, 0]
/// with an exponential integrator (integrand frozen at the left endpoint of
/// each step, kernel integrated exactly).
class LyapunovPerronOperator {
public:
  LyapunovPerronOperator(const SlowFastModel &m, double epsilon, Vector u0, Matrix eta,
                         Matrix xi, double h, double gamma)
      : m_(m), eps_(epsilon), u0_(std::move(u0)), eta_(std::move(eta)), xi_(std::move(xi)),
        gamma_(gamma) {
    const Index points = xi_.cols();
    times_.resize(points);
    for (Index j = 0; j < points; ++j) {
      times_[j] = static_cast<double>(j - (points - 1)) * h;
    }
    backward_ = make_propagator(-epsilon * m.A, h);
    fast_ = make_propagator(m.B, h);
    weights_ = (gamma * times_.array()).exp();
  }

  [[nodiscard]] Index points() const { return xi_.cols(); }
  [[nodiscard]] const Vector &times() const { return times_; }

  /// Initial iterate: u = e^{eps A t} u0, v = 0.
  void initial(Matrix &u, Matrix &v) const {
    const Index n = u0_.size();
    u.resize(n, points());
    v = Matrix::Zero(n, points());
    Vector x = u0_;
    u.col(points() - 1) = x;
    for (Index j = points() - 1; j > 0; --j) {
      x = backward_.E * x;
      u.col(j - 1) = x;
    }
  }

  void apply(const Matrix &u, const Matrix &v, Matrix &u_out, Matrix &v_out) const {
    const Index n = u0_.size();
    const Index P = points();
    u_out.resize(n, P);
    v_out.resize(n, P);
    Vector xs(n), ys(n), F(n), G(n);
    // Slow component, integrated backwards from u(0) = u0.
    u_out.col(P - 1) = u0_;
    for (Index j = P - 1; j > 0; --j) {
      const Index i = j - 1;
      if (eps_ != 0.0) {
        xs = u.col(i) + eta_.col(i);
        ys = v.col(i) + xi_.col(i);
        m_.f.eval(xs, ys, F);
        u_out.col(i) = backward_.E * u_out.col(j) - eps_ * (backward_.Phi * F);
      } else {
        u_out.col(i) = u0_;
      }
    }
    // Fast component, integrated forwards from v(-T_neg) = 0.
    v_out.col(0).setZero();
    for (Index j = 0; j + 1 < P; ++j) {
      xs = u.col(j) + eta_.col(j);
      ys = v.col(j) + xi_.col(j);
      m_.g.eval(xs, ys, G);
      v_out.col(j + 1) = fast_.E * v_out.col(j) + fast_.Phi * G;
    }
  }

  /// sup_t |e^{gamma t} du(t)| + sup_t |e^{gamma t} dv(t)|
  [[nodiscard]] double weighted_distance(const Matrix &u1, const Matrix &v1, const Matrix &u2,
                                         const Matrix &v2) const {
    double su = 0.0, sv = 0.0;
    for (Index j = 0; j < points(); ++j) {
      su = std::max(su, weights_[j] * (u1.col(j) - u2.col(j)).norm());
      sv = std::max(sv, weights_[j] * (v1.col(j) - v2.col(j)).norm());
    }
    return su + sv;
  }

private:
  const SlowFastModel &m_;
  double eps_;
  Vector u0_;
  Matrix eta_;
  Matrix xi_;
  double gamma_;
  Vector times_;
  Vector weights_;
  Propagator backward_;
  Propagator fast_;
};

inline ManifoldSolution solve_lp(const SlowFastModel &m, double epsilon, const Vector &u0,
                                 const ManifoldNoise &w, const Matrix &eta_full,
                                 const LyapunovPerronOptions &o, bool asymptotic) {
  m.check_well_formed();
  require_hurwitz(m);
  require(u0.size() == m.dim(), "lyapunov_perron_solve: u0 has wrong dimension");
  require(std::abs(o.grid_step - w.step) <= 1e-12 * w.step,
          "lyapunov_perron_solve: grid step must match the noise grid");
  const DecayRates rates = decay_rates(m);
  const double gamma = o.gamma.value_or(default_gamma(m));
  const ContractionFactors cf = contraction_factors(m, epsilon, gamma);
  if (!cf.contracting()) {
    throw AssumptionViolation("Lyapunov-Perron map is not a contraction: rho = " +
                              std::to_string(cf.rho));
  }
  const double T_neg = o.T_neg.value_or(30.0 / rates.gamma_B);
  const auto n_neg = static_cast<Index>(std::llround(T_neg / w.step));
  require(n_neg >= 1 && n_neg <= w.zero - 0, "lyapunov_perron_solve: T_neg exceeds the noise window");
  const Index start = w.zero - n_neg;
  const Index P = n_neg + 1;
  const Matrix xi = w.xi.middleCols(start, P);
  const Matrix eta = asymptotic ? Matrix::Zero(m.dim(), P) : Matrix(eta_full.middleCols(start, P));

  LyapunovPerronOperator K(m, epsilon, u0, eta, xi, w.step, gamma);
  ManifoldSolution sol;
  sol.epsilon = epsilon;
  sol.u0 = u0;
  sol.gamma = gamma;
  sol.rho = cf.rho;
  sol.rho_hat = cf.rho_hat;
  sol.L_h = cf.L_h;
  Matrix u, v, u_next, v_next;
  K.initial(u, v);
  for (int it = 1; it <= o.max_iter; ++it) {
    K.apply(u, v, u_next, v_next);
    const double r = K.weighted_distance(u_next, v_next, u, v);
    sol.residuals.push_back(r);
    u.swap(u_next);
    v.swap(v_next);
    sol.iterations = it;
    if (r < o.tol) {
      sol.grid.assign(K.times().data(), K.times().data() + P);
      sol.u = std::move(u);
      sol.v = std::move(v);
      sol.h_value = sol.v.col(P - 1);
      return sol;
    }
  }
  throw ConvergenceError("Lyapunov-Perron iteration did not reach tol " + std::to_string(o.tol) +
                         " in " + std::to_string(o.max_iter) + " sweeps");
}

} // namespace detail

/// Fixed point of K^eps for the frozen realization `w`; h^eps(omega, u0) = v(0).
[[nodiscard]] inline ManifoldSolution lyapunov_perron_solve(const SlowFastModel &m,
                                                            double epsilon, const Vector &u0,
                                                            const ManifoldNoise &w,
                                                            const LyapunovPerronOptions &o = {}) {
  return detail::solve_lp(m, epsilon, u0, w, eta_path(w, m, epsilon), o, false);
}

/// Variant that samples a fresh realization.
[[nodiscard]] inline ManifoldSolution lyapunov_perron_solve(const SlowFastModel &m,
                                                            double epsilon, const Vector &u0,
                                                            std::optional<double> gamma,
                                                            double grid_step, double tol,
                                                            int max_iter, Rng &rng) {
  LyapunovPerronOptions o;
  o.gamma = gamma;
  o.grid_step = grid_step;
  o.tol = tol;
  o.max_iter = max_iter;
  const double T_neg = 30.0 / decay_rates(m).gamma_B;
  const ManifoldNoise w = sample_manifold_noise(m, T_neg, 0.0, grid_step, rng);
  return lyapunov_perron_solve(m, epsilon, u0, w, o);
}

/// Applies K^eps once more to a converged solution and returns the weighted
/// change (a posteriori residual).
[[nodiscard]] inline double lp_posterior_residual(const SlowFastModel &m,
                                                  const ManifoldSolution &sol,
                                                  const ManifoldNoise &w, bool asymptotic = false) {
  const Index P = static_cast<Index>(sol.grid.size());
  const Index start = w.zero - (P - 1);
  const Matrix eta = asymptotic ? Matrix::Zero(m.dim(), P)
                                : Matrix(eta_path(w, m, sol.epsilon).middleCols(start, P));
  detail::LyapunovPerronOperator K(m, sol.epsilon, sol.u0, eta, w.xi.middleCols(start, P),
                                   w.step, sol.gamma);
  Matrix u2, v2;
  K.apply(sol.u, sol.v, u2, v2);
  return K.weighted_distance(u2, v2, sol.u, sol.v);
}

/// h^0(omega, u0): the eps = 0 critical manifold with the slow variable
/// frozen at u0 and eta dropped, on the same xi realization.
[[nodiscard]] inline ManifoldSolution asymptotic_manifold_solve(const SlowFastModel &m,
                                                                const Vector &u0,
                                                                const ManifoldNoise &w,
                                                                const LyapunovPerronOptions &o = {}) {
  return detail::solve_lp(m, 0.0, u0, w, Matrix(), o, true);
}

[[nodiscard]] inline Vector asymptotic_manifold_h0(const SlowFastModel &m, const Vector &u0,
                                                   double grid_step, double T_neg, Rng &rng) {
  const ManifoldNoise w = sample_manifold_noise(m, T_neg, 0.0, grid_step, rng);
  LyapunovPerronOptions o;
  o.grid_step = grid_step;
  o.T_neg = T_neg;
  return asymptotic_manifold_solve(m, u0, w, o).h_value;
}

// ---------------------------------------------------------------------------
// Exponential tracking
// ---------------------------------------------------------------------------

/// Forward solution of the random ODE
///   u' = eps A u + eps f(u + eta, v + xi),  v' = B v + g(u + eta, v + xi)
/// on [0, T_fwd] of the realization, exponential Euler with the noise step.
struct RandomOdePath {
  std::vector<double> grid;
  Matrix u;
  Matrix v;
};

[[nodiscard]] inline RandomOdePath simulate_random_ode(const SlowFastModel &m, double epsilon,
                                                       const Vector &u0, const Vector &v0,
                                                       const ManifoldNoise &w, const Matrix &eta,
                                                       double T) {
  const auto steps = static_cast<Index>(std::llround(T / w.step));
  require(steps >= 0 && w.zero + steps < w.size(), "simulate_random_ode: T exceeds the noise window");
  const int n = m.dim();
  const Propagator slow = make_propagator(epsilon * m.A, w.step);
  const Propagator fast = make_propagator(m.B, w.step);
  RandomOdePath p;
  p.u.resize(n, steps + 1);
  p.v.resize(n, steps + 1);
  p.grid.resize(static_cast<std::size_t>(steps + 1));
  Vector u = u0, v = v0, xs(n), ys(n), F(n), G(n);
  p.u.col(0) = u;
  p.v.col(0) = v;
  p.grid[0] = 0.0;
  for (Index k = 0; k < steps; ++k) {
    const Index c = w.zero + k;
    xs = u + eta.col(c);
    ys = v + w.xi.col(c);
    m.f.eval(xs, ys, F);
    m.g.eval(xs, ys, G);
    u = slow.E * u + epsilon * (slow.Phi * F);
    v = fast.E * v + fast.Phi * G;
    if (!u.allFinite() || !v.allFinite()) {
      throw Diverged("simulate_random_ode: non-finite state");
    }
    p.u.col(k + 1) = u;
    p.v.col(k + 1) = v;
    p.grid[static_cast<std::size_t>(k + 1)] = static_cast<double>(k + 1) * w.step;
  }
  return p;
}

struct TrackingResult {
  std::vector<double> t;
  std::vector<double> distance; ///< |u - u'| + |v - v'|
  std::vector<double> envelope; ///< e^{-gamma t} |v0 - v0'| / (1 - rho)
  double fitted_rate = 0.0;
  double gamma = 0.0;
  double rho = 0.0;
  double rho_hat = 0.0;
  bool under_envelope = true;
  bool identical = false;
};

struct TrackingOptions {
  std::optional<double> gamma;
  double floor_ratio = 1e-9; ///< fit only points with d(t) above floor_ratio * d(0)
};

/// Least-squares exponential rate of a positive curve.
[[nodiscard]] inline double fit_exponential_rate(const std::vector<double> &t,
                                                 const std::vector<double> &d, double floor) {
  std::vector<double> ts, ls;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (d[i] > floor && d[i] > 0.0) {
      ts.push_back(t[i]);
      ls.push_back(std::log(d[i]));
    }
  }
  if (ts.size() < 2) {
    return 0.0;
  }
  double mt = 0.0, ml = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    mt += ts[i];
    ml += ls[i];
  }
  mt /= static_cast<double>(ts.size());
  ml /= static_cast<double>(ts.size());
  double stt = 0.0, stl = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    stt += (ts[i] - mt) * (ts[i] - mt);
    stl += (ts[i] - mt) * (ls[i] - ml);
  }
  return stt > 0.0 ? -stl / stt : 0.0;
}

/// Simulates both initial conditions on the same realization and compares
/// their distance with the exponential tracking envelope.
[[nodiscard]] inline TrackingResult tracking_check(const SlowFastModel &m, double epsilon,
                                                   const std::pair<Vector, Vector> &ic_on,
                                                   const std::pair<Vector, Vector> &ic_off,
                                                   double T, const ManifoldNoise &w,
                                                   const TrackingOptions &o = {}) {
  const double gamma = o.gamma.value_or(default_gamma(m));
  const ContractionFactors cf = contraction_factors(m, epsilon, gamma);
  const Matrix eta = eta_path(w, m, epsilon);
  const RandomOdePath a = simulate_random_ode(m, epsilon, ic_on.first, ic_on.second, w, eta, T);
  const RandomOdePath b = simulate_random_ode(m, epsilon, ic_off.first, ic_off.second, w, eta, T);
  TrackingResult r;
  r.gamma = gamma;
  r.rho = cf.rho;
  r.rho_hat = cf.rho_hat;
  r.t = a.grid;
  const double dv0 = (ic_on.second - ic_off.second).norm();
  for (Index k = 0; k < a.u.cols(); ++k) {
    const double d = (a.u.col(k) - b.u.col(k)).norm() + (a.v.col(k) - b.v.col(k)).norm();
    const double env = std::exp(-gamma * a.grid[static_cast<std::size_t>(k)]) * dv0 / (1.0 - cf.rho);
    r.distance.push_back(d);
    r.envelope.push_back(env);
    if (d > env * (1.0 + 1e-12) + 1e-15) {
      r.under_envelope = false;
    }
  }
  r.identical = r.distance.front() == 0.0 &&
                std::all_of(r.distance.begin(), r.distance.end(), [](double d) { return d == 0.0; });
  if (!r.identical) {
    r.fitted_rate = fit_exponential_rate(r.t, r.distance, o.floor_ratio * r.distance.front());
  }
  return r;
}

/// Finds u0 such that the manifold trajectory from (u0, h(u0)) tracks the
/// trajectory from (u_off, v_off): iterates
///   u0 <- u_off - eps int_0^T e^{-eps A s} (F_on(s) - F_off(s)) ds,
/// which makes the slow components agree as t -> infinity.
struct TrackingPartner {
  Vector u0;
  Vector h;
  int iterations = 0;
};

[[nodiscard]] inline TrackingPartner find_tracking_partner(const SlowFastModel &m, double epsilon,
                                                           const Vector &u_off, const Vector &v_off,
                                                           const ManifoldNoise &w, double horizon,
                                                           const LyapunovPerronOptions &o = {},
                                                           double tol = 1e-12, int max_iter = 50) {
  const int n = m.dim();
  const Matrix eta = eta_path(w, m, epsilon);
  const RandomOdePath off = simulate_random_ode(m, epsilon, u_off, v_off, w, eta, horizon);
  const Propagator back = make_propagator(-epsilon * m.A, w.step);
  TrackingPartner p;
  p.u0 = u_off;
  Vector xs(n), ys(n), Fa(n), Fb(n);
  for (int it = 1; it <= max_iter; ++it) {
    p.iterations = it;
    p.h = detail::solve_lp(m, epsilon, p.u0, w, eta, o, false).h_value;
    if (epsilon == 0.0) {
      return p;
    }
    const RandomOdePath on = simulate_random_ode(m, epsilon, p.u0, p.h, w, eta, horizon);
    // int_0^T e^{-eps A s} D(s) ds with D frozen per step: sum e^{-eps A s_k} Phi D_k.
    Vector acc = Vector::Zero(n);
    Matrix decay = Matrix::Identity(n, n);
    for (Index k = 0; k + 1 < on.u.cols(); ++k) {
      const Index c = w.zero + k;
      xs = on.u.col(k) + eta.col(c);
      ys = on.v.col(k) + w.xi.col(c);
      m.f.eval(xs, ys, Fa);
      xs = off.u.col(k) + eta.col(c);
      ys = off.v.col(k) + w.xi.col(c);
      m.f.eval(xs, ys, Fb);
      acc += decay * (back.Phi * (Fa - Fb));
      decay = decay * back.E;
    }
    const Vector next = u_off - epsilon * acc;
    const double change = (next - p.u0).norm();
    p.u0 = next;
    if (change < tol) {
      p.h = detail::solve_lp(m, epsilon, p.u0, w, eta, o, false).h_value;
      return p;
    }
  }
  throw ConvergenceError("find_tracking_partner: no convergence");
}

} // namespace slowfast
