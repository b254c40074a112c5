#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "slowfast/harness.hpp"
#include "slowfast/integrator.hpp"
#include "slowfast/model.hpp"
#include "slowfast/noise.hpp"

namespace slowfast {

// ---------------------------------------------------------------------------
// Ergodic estimation of the averaged drift
// ---------------------------------------------------------------------------

struct FbarEstimate {
  Vector value;
  Vector standard_error;
  std::size_t replicas = 0;
  std::size_t diverged = 0;
};

/// Time average of f(x, y_x(s)) over s in [burn_in, horizon] along
/// `replicas` independent frozen-fast paths started at y0 (default m.y0).
/// The standard error is taken across replicas.
[[nodiscard]] inline FbarEstimate estimate_fbar(const SlowFastModel &m, const Vector &x,
                                                double burn_in, double horizon, double dt,
                                                Rng &rng, int replicas = 8,
                                                std::optional<Vector> y0 = std::nullopt) {
  const int n = m.dim();
  require(x.size() == n, "estimate_fbar: x has wrong dimension");
  require(horizon > burn_in && burn_in >= 0.0, "estimate_fbar: need 0 <= burn_in < horizon");
  require(replicas >= 1, "estimate_fbar: replicas must be positive");
  const Vector start = y0.value_or(m.y0);

  FbarEstimate est;
  est.standard_error = Vector::Zero(n);
  if (m.f.is_y_independent()) {
    est.value = m.f(x, start);
    est.replicas = static_cast<std::size_t>(replicas);
    return est;
  }

  std::vector<Vector> means;
  Vector fy(n);
  for (int r = 0; r < replicas; ++r) {
    Rng sub = rng.split(StreamRole::Replica);
    Vector acc = Vector::Zero(n);
    std::size_t count = 0;
    const bool ok = stream_frozen_fast(m, x, start, horizon, dt, sub,
                                       [&](std::size_t, double t, const Vector &y) {
                                         if (t >= burn_in) {
                                           m.f.eval(x, y, fy);
                                           acc += fy;
                                           ++count;
                                         }
                                       });
    if (!ok || count == 0) {
      ++est.diverged;
      continue;
    }
    means.push_back(acc / static_cast<double>(count));
  }
  if (means.empty()) {
    throw Diverged("estimate_fbar: every frozen-fast replica diverged");
  }
  est.replicas = means.size();
  est.value = Vector::Zero(n);
  for (const auto &v : means) {
    est.value += v;
  }
  est.value /= static_cast<double>(means.size());
  if (means.size() > 1) {
    Vector ss = Vector::Zero(n);
    for (const auto &v : means) {
      ss += (v - est.value).cwiseAbs2();
    }
    const double k = static_cast<double>(means.size());
    est.standard_error = (ss / (k - 1.0) / k).cwiseSqrt();
  }
  return est;
}

// ---------------------------------------------------------------------------
// Averaged drift representations
// ---------------------------------------------------------------------------

enum class FbarKind {
  YIndependent,       ///< f does not depend on y
  AffineInY,          ///< f affine in y and g independent of y: f(x, -B^{-1} g(x))
  GaussianQuadrature, ///< g independent of y, Brownian fast noise: Gaussian invariant law
  Tabulated,          ///< ergodic estimates on a grid, multilinear interpolation
};

[[nodiscard]] inline const char *to_string(FbarKind k) {
  switch (k) {
  case FbarKind::YIndependent: return "y_independent";
  case FbarKind::AffineInY: return "affine_in_y";
  case FbarKind::GaussianQuadrature: return "gaussian_quadrature";
  case FbarKind::Tabulated: return "tabulated";
  }
  return "?";
}

/// Gauss-Hermite rule for E[phi(Z)], Z ~ N(0, 1): nodes and probability weights.
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Golub-Welsch construction from the Jacobi matrix of the probabilists'
/// Hermite polynomials.
[[nodiscard]] inline GaussHermite gauss_hermite(int points) {
  require(points >= 1, "gauss_hermite: need at least one point");
  Matrix J = Matrix::Zero(points, points);
  for (int i = 1; i < points; ++i) {
    J(i, i - 1) = J(i - 1, i) = std::sqrt(static_cast<double>(i));
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(J);
  GaussHermite gh;
  for (int i = 0; i < points; ++i) {
    gh.nodes.push_back(es.eigenvalues()[i]);
    const double v = es.eigenvectors()(0, i);
    gh.weights.push_back(v * v);
  }
  return gh;
}

/// Solves B S + S B^T + Q = 0 for Hurwitz B (Kronecker form; small n only).
[[nodiscard]] inline Matrix solve_lyapunov(const Matrix &B, const Matrix &Q) {
  const Index n = B.rows();
  const Matrix I = Matrix::Identity(n, n);
  // vec(B S + S B^T) = (I kron B + B kron I) vec(S), column-major vec.
  Matrix Kc = Matrix::Zero(n * n, n * n);
  for (Index i = 0; i < n; ++i) {
    Kc.block(i * n, i * n, n, n) += B;
    for (Index j = 0; j < n; ++j) {
      Kc.block(i * n, j * n, n, n) += B(i, j) * I;
    }
  }
  const Vector q = Eigen::Map<const Vector>(Q.data(), n * n);
  const Vector s = Kc.fullPivLu().solve(-q);
  Matrix S = Eigen::Map<const Matrix>(s.data(), n, n);
  return 0.5 * (S + S.transpose());
}

/// Values of an averaged drift on a tensor grid over a box in x.
struct FbarTable {
  Vector lo;
  Vector hi;
  std::vector<int> nodes; ///< nodes per coordinate (>= 2)
  Matrix values;          ///< n x prod(nodes), first coordinate fastest
  Matrix standard_errors;

  [[nodiscard]] std::size_t size() const {
    std::size_t s = 1;
    for (int k : nodes) {
      s *= static_cast<std::size_t>(k);
    }
    return s;
  }

  [[nodiscard]] Vector node(std::size_t flat) const {
    const Index n = lo.size();
    Vector x(n);
    for (Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(nodes[static_cast<std::size_t>(i)]);
      const std::size_t j = flat % k;
      flat /= k;
      x[i] = lo[i] + (hi[i] - lo[i]) * static_cast<double>(j) / static_cast<double>(k - 1);
    }
    return x;
  }

  /// Multilinear interpolation; points outside the box are clamped onto it.
  void interpolate(const Vector &x, Vector &out) const {
    const Index n = lo.size();
    std::vector<std::size_t> base(static_cast<std::size_t>(n));
    std::vector<double> frac(static_cast<std::size_t>(n));
    std::vector<std::size_t> stride(static_cast<std::size_t>(n));
    std::size_t s = 1;
    for (Index i = 0; i < n; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const int k = nodes[ui];
      stride[ui] = s;
      s *= static_cast<std::size_t>(k);
      const double h = (hi[i] - lo[i]) / (k - 1);
      double pos = (std::clamp(x[i], lo[i], hi[i]) - lo[i]) / h;
      auto j = static_cast<std::size_t>(std::floor(pos));
      j = std::min<std::size_t>(j, static_cast<std::size_t>(k - 2));
      base[ui] = j;
      frac[ui] = pos - static_cast<double>(j);
    }
    out.setZero(values.rows());
    const std::size_t corners = std::size_t{1} << static_cast<std::size_t>(n);
    for (std::size_t c = 0; c < corners; ++c) {
      double w = 1.0;
      std::size_t flat = 0;
      for (Index i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const bool up = (c >> ui) & 1U;
        w *= up ? frac[ui] : 1.0 - frac[ui];
        flat += (base[ui] + (up ? 1 : 0)) * stride[ui];
      }
      if (w != 0.0) {
        out += w * values.col(static_cast<Index>(flat));
      }
    }
  }
};

/// The averaged drift x -> fbar(x) in one of the representations above.
class AveragedDrift {
public:
  AveragedDrift() = default;

  [[nodiscard]] FbarKind kind() const noexcept { return kind_; }
  [[nodiscard]] int dim() const noexcept { return dim_; }
  [[nodiscard]] const std::optional<FbarTable> &table() const noexcept { return table_; }

  void eval(const Vector &x, Vector &out) const {
    switch (kind_) {
    case FbarKind::YIndependent:
      f_.eval(x, zero_, out);
      return;
    case FbarKind::AffineInY: {
      Vector gy(dim_);
      g_.eval(x, zero_, gy);
      const Vector ystar = -B_lu_.solve(gy);
      f_.eval(x, ystar, out);
      return;
    }
    case FbarKind::GaussianQuadrature: {
      Vector gy(dim_);
      g_.eval(x, zero_, gy);
      const Vector mu = -B_lu_.solve(gy);
      Vector y(dim_), fy(dim_);
      out.setZero(dim_);
      for (std::size_t q = 0; q < quad_weights_.size(); ++q) {
        y.noalias() = mu + quad_points_.col(static_cast<Index>(q));
        f_.eval(x, y, fy);
        out += quad_weights_[q] * fy;
      }
      return;
    }
    case FbarKind::Tabulated:
      table_->interpolate(x, out);
      return;
    }
  }

  [[nodiscard]] Vector operator()(const Vector &x) const {
    Vector out(dim_);
    eval(x, out);
    return out;
  }

  /// A y-independent drift: the average is f itself.
  static AveragedDrift y_independent(const DriftFn &f) {
    AveragedDrift d(FbarKind::YIndependent, f.dim());
    d.f_ = f;
    return d;
  }

  static AveragedDrift affine(const DriftFn &f, const DriftFn &g, const Matrix &B) {
    AveragedDrift d(FbarKind::AffineInY, f.dim());
    d.f_ = f;
    d.g_ = g;
    d.B_lu_ = B.partialPivLu();
    return d;
  }

  /// Tensor Gauss-Hermite quadrature against N(-B^{-1} g(x), Sigma) where
  /// B Sigma + Sigma B^T + sigma2 sigma2^T = 0.
  static AveragedDrift gaussian(const DriftFn &f, const DriftFn &g, const Matrix &B,
                                const Matrix &sigma2, int points_per_dim = 0) {
    const int n = f.dim();
    AveragedDrift d(FbarKind::GaussianQuadrature, n);
    d.f_ = f;
    d.g_ = g;
    d.B_lu_ = B.partialPivLu();
    d.covariance_ = solve_lyapunov(B, sigma2 * sigma2.transpose());
    if (points_per_dim <= 0) {
      points_per_dim = n == 1 ? 48 : (n == 2 ? 24 : 10);
    }
    const GaussHermite gh = gauss_hermite(points_per_dim);
    const Matrix L = matrix_sqrt_psd(d.covariance_, 1e-8);
    std::size_t total = 1;
    for (int i = 0; i < n; ++i) {
      total *= static_cast<std::size_t>(points_per_dim);
    }
    d.quad_points_.resize(n, static_cast<Index>(total));
    d.quad_weights_.resize(total);
    Vector z(n);
    for (std::size_t flat = 0; flat < total; ++flat) {
      std::size_t rem = flat;
      double w = 1.0;
      for (int i = 0; i < n; ++i) {
        const std::size_t j = rem % static_cast<std::size_t>(points_per_dim);
        rem /= static_cast<std::size_t>(points_per_dim);
        z[i] = gh.nodes[j];
        w *= gh.weights[j];
      }
      d.quad_points_.col(static_cast<Index>(flat)) = L * z;
      d.quad_weights_[flat] = w;
    }
    return d;
  }

  static AveragedDrift tabulated(FbarTable table) {
    AveragedDrift d(FbarKind::Tabulated, static_cast<int>(table.values.rows()));
    d.table_ = std::move(table);
    return d;
  }

  [[nodiscard]] const Matrix &stationary_covariance() const noexcept { return covariance_; }

private:
  AveragedDrift(FbarKind kind, int dim) : kind_(kind), dim_(dim), zero_(Vector::Zero(dim)) {}

  FbarKind kind_ = FbarKind::YIndependent;
  int dim_ = 0;
  Vector zero_;
  DriftFn f_;
  DriftFn g_;
  Eigen::PartialPivLU<Matrix> B_lu_;
  Matrix covariance_;
  Matrix quad_points_;
  std::vector<double> quad_weights_;
  std::optional<FbarTable> table_;
};

/// dx = (A x + fbar(x)) dt + sigma1 dL
struct AveragedModel {
  Matrix A;
  AveragedDrift fbar;
  NoiseSpec slow;
  Vector x0;

  [[nodiscard]] int dim() const noexcept { return static_cast<int>(A.rows()); }
};

enum class FbarStrategy { Auto, Tabulate };

struct AveragingOptions {
  FbarStrategy strategy = FbarStrategy::Auto;
  // Table used when no closed form applies (or when tabulation is forced).
  double table_half_width = 3.0;
  int table_nodes = 25;
  // Ergodic estimator settings; burn-in defaults to 10 / gamma_B.
  std::optional<double> burn_in;
  double horizon = 200.0;
  double dt = 0.01;
  int replicas = 4;
  std::uint64_t seed = 0;
  unsigned workers = 1;
};

/// Tabulates the ergodic estimator on a tensor grid; nodes are independent
/// ensemble members so the table does not depend on the worker count.
[[nodiscard]] inline FbarTable tabulate_fbar(const SlowFastModel &m, const AveragingOptions &o) {
  const int n = m.dim();
  require(o.table_nodes >= 2, "tabulate_fbar: need at least two nodes per coordinate");
  const double burn = o.burn_in.value_or(10.0 / decay_rates(m).gamma_B);
  FbarTable t;
  t.lo = Vector::Constant(n, -o.table_half_width);
  t.hi = Vector::Constant(n, o.table_half_width);
  t.nodes.assign(static_cast<std::size_t>(n), o.table_nodes);
  const std::size_t total = t.size();
  const EnsembleTask task = [&](const StreamFactory &sf) -> std::optional<Vector> {
    Rng rng = sf.stream(StreamRole::Auxiliary);
    const FbarEstimate e = estimate_fbar(m, t.node(sf.path_index()), burn,
                                         burn + o.horizon, o.dt, rng, o.replicas);
    Vector out(2 * n);
    out << e.value, e.standard_error;
    return out;
  };
  const Ensemble ens = run_ensemble("fbar_table", task, total, o.seed, o.workers);
  if (ens.diverged > 0) {
    throw Diverged("tabulate_fbar: a table node diverged");
  }
  t.values.resize(n, static_cast<Index>(total));
  t.standard_errors.resize(n, static_cast<Index>(total));
  for (std::size_t k = 0; k < total; ++k) {
    t.values.col(static_cast<Index>(k)) = ens.outputs[k].head(n);
    t.standard_errors.col(static_cast<Index>(k)) = ens.outputs[k].tail(n);
  }
  return t;
}

/// Chooses the most exact available representation of fbar.
[[nodiscard]] inline AveragedModel build_averaged_model(const SlowFastModel &m,
                                                        const AveragingOptions &o = {}) {
  m.check_well_formed();
  require_hurwitz(m);
  AveragedModel am{m.A, {}, m.slow, m.x0};
  const bool g_frozen = m.g.is_y_independent();
  if (o.strategy == FbarStrategy::Auto) {
    if (m.f.is_y_independent()) {
      am.fbar = AveragedDrift::y_independent(m.f);
      return am;
    }
    if (m.f.y_degree() <= 1.0 && g_frozen) {
      am.fbar = AveragedDrift::affine(m.f, m.g, m.B);
      return am;
    }
    if (g_frozen && !m.fast.jumps.active()) {
      am.fbar = AveragedDrift::gaussian(m.f, m.g, m.B, m.fast.sigma);
      return am;
    }
  }
  am.fbar = AveragedDrift::tabulated(tabulate_fbar(m, o));
  return am;
}

/// Coarse Lipschitz guard: probed constant of fbar on [-hw, hw]^n against
/// L_f (1 + L_g / (gamma_B - L_g)).
struct FbarLipschitzCheck {
  double estimate = 0.0;
  double bound = 0.0;
  bool pass = false;
};

[[nodiscard]] inline FbarLipschitzCheck check_fbar_lipschitz(const AveragedModel &am,
                                                             double L_f, double L_g,
                                                             double gamma_B,
                                                             double half_width = 3.0,
                                                             int samples = 500,
                                                             std::uint64_t seed = 1) {
  const int n = am.dim();
  Rng rng(seed, 0, StreamRole::Probe);
  FbarLipschitzCheck c;
  c.bound = gamma_B > L_g ? L_f * (1.0 + L_g / (gamma_B - L_g))
                          : std::numeric_limits<double>::infinity();
  Vector p(n), q(n);
  for (int s = 0; s < samples; ++s) {
    for (int i = 0; i < n; ++i) {
      p[i] = rng.uniform(-half_width, half_width);
      q[i] = rng.uniform(-half_width, half_width);
    }
    const double d = (p - q).lpNorm<1>();
    if (d > 0.0) {
      c.estimate = std::max(c.estimate, (am.fbar(p) - am.fbar(q)).norm() / d);
    }
  }
  c.pass = c.estimate <= c.bound * (1.0 + 1e-9) + 1e-9;
  return c;
}

// ---------------------------------------------------------------------------
// Mixing diagnostics
// ---------------------------------------------------------------------------

struct MixingPoint {
  double t = 0.0;
  double deviation = 0.0;
  double standard_error = 0.0;
  std::size_t start_index = 0; ///< index into the y0 list
};

struct MixingReport {
  double lipschitz_g = 0.0;
  double eta_bound = 0.0; ///< 2 (gamma_B - 6 L_g^2)
  double eta_empirical = 0.0;
  double eta_empirical_se = 0.0;
  std::size_t fit_points = 0;
  Vector fbar;
  std::vector<MixingPoint> curve;
};

struct MixingOptions {
  double record_step = 0.05;
  double noise_floor_se = 3.0; ///< points with deviation below this many SE are not fitted
  std::optional<Vector> fbar;  ///< known fbar(x); computed when absent
};

/// L_g used for the contraction/mixing formulas: declared, else exact for
/// built-in families, else probed.
[[nodiscard]] inline double resolved_lipschitz(const DriftFn &fn, std::uint64_t seed = 7) {
  if (fn.constants.lipschitz) {
    return *fn.constants.lipschitz;
  }
  if (auto a = fn.analytic_lipschitz()) {
    return *a;
  }
  Rng rng(seed, 0, StreamRole::Probe);
  return estimate_lipschitz(fn, ProbeBox::symmetric(fn.dim(), 3.0), 2000, rng);
}

/// Estimates |E f(x, y_x^{y0}(t)) - fbar(x)| for every y0 in `y_list` from N
/// frozen-fast paths each, and fits an exponential rate to the curve.
[[nodiscard]] inline MixingReport mixing_diagnostic(const SlowFastModel &m, const Vector &x,
                                                    const std::vector<Vector> &y_list, double T,
                                                    double dt, int N, Rng &rng,
                                                    const MixingOptions &opts = {}) {
  require(N >= 100, "mixing_diagnostic: N must be at least 100");
  require(!y_list.empty(), "mixing_diagnostic: empty list of initial fast states");
  const int n = m.dim();
  MixingReport rep;
  const DecayRates rates = decay_rates(m);
  rep.lipschitz_g = resolved_lipschitz(m.g);
  rep.eta_bound = 2.0 * (rates.gamma_B - 6.0 * rep.lipschitz_g * rep.lipschitz_g);
  rep.fbar = opts.fbar ? *opts.fbar : build_averaged_model(m).fbar(x);

  const auto stride = static_cast<std::size_t>(std::max(1.0, std::round(opts.record_step / dt)));
  const std::size_t steps = make_grid(0.0, T, dt).size() - 1;
  const std::size_t records = steps / stride + 1;

  std::vector<double> ts, logs, ws;
  Vector fy(n);
  for (std::size_t s = 0; s < y_list.size(); ++s) {
    Matrix sum = Matrix::Zero(n, static_cast<Index>(records));
    Matrix sumsq = Matrix::Zero(n, static_cast<Index>(records));
    std::vector<double> times(records, 0.0);
    int used = 0;
    for (int p = 0; p < N; ++p) {
      Rng sub = rng.split(StreamRole::Replica);
      Matrix psum = Matrix::Zero(n, static_cast<Index>(records));
      const bool ok = stream_frozen_fast(m, x, y_list[s], T, dt, sub,
                                         [&](std::size_t k, double t, const Vector &y) {
                                           if (k % stride == 0 && k / stride < records) {
                                             m.f.eval(x, y, fy);
                                             psum.col(static_cast<Index>(k / stride)) = fy;
                                             times[k / stride] = t;
                                           }
                                         });
      if (!ok) {
        continue;
      }
      sum += psum;
      sumsq += psum.cwiseAbs2();
      ++used;
    }
    require(used >= 2, "mixing_diagnostic: too many diverged paths");
    const double u = used;
    for (std::size_t r = 0; r < records; ++r) {
      const Vector mean = sum.col(static_cast<Index>(r)) / u;
      const Vector var =
          ((sumsq.col(static_cast<Index>(r)) / u - mean.cwiseAbs2()) * (u / (u - 1.0)))
              .cwiseMax(0.0);
      MixingPoint pt;
      pt.t = times[r];
      pt.deviation = (mean - rep.fbar).norm();
      pt.standard_error = std::sqrt(var.sum() / u);
      pt.start_index = s;
      rep.curve.push_back(pt);
      if (pt.deviation > 0.0 && pt.deviation > opts.noise_floor_se * pt.standard_error) {
        ts.push_back(pt.t);
        logs.push_back(std::log(pt.deviation));
        const double rel = pt.standard_error / pt.deviation;
        ws.push_back(rel > 0.0 ? 1.0 / (rel * rel) : std::numeric_limits<double>::infinity());
      }
    }
  }

  rep.fit_points = ts.size();
  if (ts.size() >= 3) {
    // Weighted least squares in log space; var(log d) ~ (se / d)^2.
    // Exact points (zero standard error) get the largest finite weight.
    double cap = 0.0;
    for (double w : ws) {
      cap = std::isfinite(w) ? std::max(cap, w) : cap;
    }
    const bool deterministic = cap == 0.0;
    for (double &w : ws) {
      w = std::min(w, cap);
    }
    double W = 0.0, mt = 0.0, ml = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const double w = deterministic ? 1.0 : ws[i];
      W += w;
      mt += w * ts[i];
      ml += w * logs[i];
    }
    mt /= W;
    ml /= W;
    double stt = 0.0, stl = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const double w = deterministic ? 1.0 : ws[i];
      stt += w * (ts[i] - mt) * (ts[i] - mt);
      stl += w * (ts[i] - mt) * (logs[i] - ml);
    }
    if (stt > 0.0) {
      const double slope = stl / stt;
      double rss = 0.0;
      for (std::size_t i = 0; i < ts.size(); ++i) {
        const double w = deterministic ? 1.0 : ws[i];
        const double e = logs[i] - (ml + slope * (ts[i] - mt));
        rss += w * e * e;
      }
      rep.eta_empirical = -slope;
      rep.eta_empirical_se = std::sqrt(rss / (static_cast<double>(ts.size()) - 2.0) / stt);
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Averaged and auxiliary simulations
// ---------------------------------------------------------------------------

/// Euler-Maruyama for the averaged equation on given slow increments.
[[nodiscard]] inline Trajectory simulate_averaged(const AveragedModel &am,
                                                  const IncrementStream &incr) {
  const int n = am.dim();
  Trajectory tr = detail::start_trajectory(incr.grid, am.x0, "averaged", 0.0);
  const bool noisy = !am.slow.is_silent();
  detail::EulerKernel kx(n);
  Vector x = am.x0, fx(n);
  for (std::size_t k = 0; k < incr.steps(); ++k) {
    const auto c = static_cast<Index>(k);
    am.fbar.eval(x, fx);
    kx.advance(x, am.A, fx, incr.dt(k), am.slow.sigma, noisy, incr.dW.col(c), incr.dJ.col(c));
    if (!x.allFinite()) {
      detail::mark_diverged(tr, c + 1);
      return tr;
    }
    tr.states.col(c + 1) = x;
  }
  return tr;
}

/// Averaged equation on [0, T]; `incr` must live on make_grid(0, T, dt).
[[nodiscard]] inline Trajectory simulate_averaged(const AveragedModel &am, double T, double dt,
                                                  const IncrementStream &incr) {
  if (incr.grid != make_grid(0.0, T, dt)) {
    throw InvalidArgument("simulate_averaged: increments do not match the requested grid");
  }
  return simulate_averaged(am, incr);
}

[[nodiscard]] inline Trajectory simulate_averaged(const AveragedModel &am, double T, double dt,
                                                  Rng &rng) {
  return simulate_averaged(am, sample_increments(am.slow, make_grid(0.0, T, dt), rng));
}

/// The coupled system together with its Khasminskii auxiliary processes.
struct AuxiliaryPaths {
  Trajectory x;
  Trajectory y;
  Trajectory x_hat;
  Trajectory y_hat;
};

/// On each block [k delta, (k+1) delta) the auxiliary fast process restarts
/// from y^eps(k delta) and evolves with x frozen at x^eps(k delta); the
/// auxiliary slow process integrates A x^eps(k delta) + f(x^eps(k delta), y_hat).
/// All four processes share the same noise.
[[nodiscard]] inline AuxiliaryPaths simulate_auxiliary(const SlowFastModel &m, double delta,
                                                       double T, double dt, Rng &rng) {
  require(delta > 0.0 && delta <= T * (1.0 + 1e-12), "simulate_auxiliary: need 0 < delta <= T");
  m.check_well_formed();
  check_fast_step(dt, m.epsilon);
  const auto grid = make_grid(0.0, T, dt);
  const IncrementStream slow = sample_increments(m.slow, grid, rng);
  const IncrementStream fast = rescale_fast(m.fast, m.epsilon, grid, rng);
  auto [xs, ys] = simulate_slow_fast(m, slow, fast);
  if (xs.diverged) {
    throw Diverged("simulate_auxiliary: coupled path diverged");
  }

  const int n = m.dim();
  AuxiliaryPaths out;
  out.x_hat = detail::start_trajectory(grid, m.x0, "x_hat", m.epsilon);
  out.y_hat = detail::start_trajectory(grid, m.y0, "y_hat", m.epsilon);
  const Matrix B_eps = m.B / m.epsilon;
  const bool slow_noisy = !m.slow.is_silent();
  const bool fast_noisy = !m.fast.is_silent();
  detail::EulerKernel ky(n);
  Vector xh = m.x0, yh = m.y0, xb = m.x0, fx(n), gy(n), Axb(n);
  const Matrix zero = Matrix::Zero(n, n);
  std::size_t block = 0;
  for (std::size_t k = 0; k < slow.steps(); ++k) {
    const auto c = static_cast<Index>(k);
    const auto b = static_cast<std::size_t>(std::floor(grid[k] / delta + 1e-9));
    if (k == 0 || b != block) {
      block = b;
      xb = xs.states.col(c);
      yh = ys.states.col(c);
    }
    const double h = slow.dt(k);
    m.f.eval(xb, yh, fx);
    Axb.noalias() = m.A * xb;
    xh += (Axb + fx) * h;
    if (slow_noisy) {
      xh.noalias() += m.slow.sigma * (slow.dW.col(c) + slow.dJ.col(c));
    }
    m.g.eval(xb, yh, gy);
    gy /= m.epsilon;
    ky.advance(yh, B_eps, gy, h, m.fast.sigma, fast_noisy, fast.dW.col(c), fast.dJ.col(c));
    if (!xh.allFinite() || !yh.allFinite()) {
      detail::mark_diverged(out.x_hat, c + 1);
      detail::mark_diverged(out.y_hat, c + 1);
      break;
    }
    out.x_hat.states.col(c + 1) = xh;
    out.y_hat.states.col(c + 1) = yh;
  }
  out.x = std::move(xs);
  out.y = std::move(ys);
  return out;
}

// ---------------------------------------------------------------------------
// Strong convergence experiment
// ---------------------------------------------------------------------------

/// delta = eps^exponent
struct DeltaRule {
  double exponent = 2.0 / 3.0;
  [[nodiscard]] double operator()(double eps) const { return std::pow(eps, exponent); }
};

struct RatePoint {
  double epsilon = 0.0;
  double delta = 0.0;
  double bound = 0.0; ///< eps / delta
  double error = 0.0; ///< Monte-Carlo E sup |x^eps - x|^2
  double standard_error = 0.0;
  std::size_t paths = 0;
  std::size_t diverged = 0;
  bool flagged = false; ///< more than 5% of the paths diverged
};

struct RateReport {
  DeltaRule delta_rule;
  double T = 1.0;
  std::vector<RatePoint> points;
  RateFit fit;

  /// Errors non-increasing as eps decreases, up to `k` standard errors.
  [[nodiscard]] bool monotone(double k = 2.0) const {
    for (std::size_t i = 1; i < points.size(); ++i) {
      const auto &a = points[i - 1];
      const auto &b = points[i];
      if (b.error > a.error + k * std::hypot(a.standard_error, b.standard_error)) {
        return false;
      }
    }
    return true;
  }
};

struct StrongErrorOptions {
  double dt_ratio = 10.0; ///< dt = eps / dt_ratio
  unsigned workers = 1;
};

/// For every eps, couples the slow-fast system and the averaged equation on
/// shared slow increments and estimates E sup_{t<=T} |x^eps(t) - x(t)|^2.
[[nodiscard]] inline RateReport strong_error_experiment(const SlowFastModel &m,
                                                        const AveragedModel &am,
                                                        const std::vector<double> &epsilons,
                                                        DeltaRule delta_rule, double T, int N,
                                                        std::uint64_t master_seed,
                                                        const StrongErrorOptions &opts = {}) {
  require(N >= 100, "strong_error_experiment: N must be at least 100");
  require(epsilons.size() >= 3, "strong_error_experiment: need at least three epsilons");
  for (std::size_t i = 1; i < epsilons.size(); ++i) {
    require(epsilons[i] < epsilons[i - 1], "strong_error_experiment: epsilons must decrease");
  }
  require(opts.dt_ratio >= 10.0, "strong_error_experiment: dt_ratio below the stability limit");
  RateReport rep;
  rep.delta_rule = delta_rule;
  rep.T = T;
  std::vector<double> xs, ys;
  for (std::size_t e = 0; e < epsilons.size(); ++e) {
    const double eps = epsilons[e];
    const SlowFastModel me = m.with_epsilon(eps);
    const double dt = eps / opts.dt_ratio;
    const auto grid = make_grid(0.0, T, dt);
    const EnsembleTask task = [&](const StreamFactory &sf) -> std::optional<Vector> {
      Rng rs = sf.stream(StreamRole::SlowNoise);
      Rng rf = sf.stream(StreamRole::FastNoise);
      const IncrementStream slow = sample_increments(me.slow, grid, rs);
      const IncrementStream fast = rescale_fast(me.fast, eps, grid, rf);
      const auto [x, y] = simulate_slow_fast(me, slow, fast);
      const Trajectory xa = simulate_averaged(am, slow);
      if (x.diverged || xa.diverged) {
        return std::nullopt;
      }
      const double sup = (x.states - xa.states).colwise().squaredNorm().maxCoeff();
      return Vector::Constant(1, sup);
    };
    const Ensemble ens = run_ensemble("strong_error", task, static_cast<std::size_t>(N),
                                      derive_seed(master_seed, e, StreamRole::Auxiliary),
                                      opts.workers);
    const SampleStats st = summarize(ens.column(0));
    RatePoint p;
    p.epsilon = eps;
    p.delta = delta_rule(eps);
    p.bound = eps / p.delta;
    p.error = st.mean;
    p.standard_error = st.se_mean;
    p.paths = ens.outputs.size();
    p.diverged = ens.diverged;
    p.flagged = ens.warning();
    rep.points.push_back(p);
    xs.push_back(eps);
    ys.push_back(st.mean);
  }
  bool positive = std::all_of(ys.begin(), ys.end(), [](double v) { return v > 0.0; });
  if (positive) {
    rep.fit = fit_loglog_rate(xs, ys);
  }
  return rep;
}

} // namespace slowfast
