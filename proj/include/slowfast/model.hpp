#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "slowfast/drift.hpp"
#include "slowfast/linalg.hpp"
#include "slowfast/rng.hpp"
#include "slowfast/types.hpp"

namespace slowfast {

// ---------------------------------------------------------------------------
// Jump specifications
// ---------------------------------------------------------------------------

/// Each coordinate of the jump is drawn i.i.d. from Uniform(lo, hi).
struct UniformJumps {
  double lo = 0.0;
  double hi = 0.0;
};

struct JumpAtom {
  Vector z;
  double probability = 0.0;
};

/// Jump sizes drawn from a finite set of atoms.
struct DiscreteJumps {
  std::vector<JumpAtom> atoms;
};

using JumpSizeDistribution = std::variant<UniformJumps, DiscreteJumps>;

/// Finite-activity jump component: compound Poisson with intensity
/// `intensity`, sizes supported strictly inside the unit ball.
struct JumpSpec {
  double intensity = 0.0;
  JumpSizeDistribution size = UniformJumps{};
  bool compensated = true;

  [[nodiscard]] bool active() const noexcept { return intensity > 0.0; }

  [[nodiscard]] Vector mean(int dim) const {
    return std::visit(
        [&](const auto &d) -> Vector {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, UniformJumps>) {
            return Vector::Constant(dim, 0.5 * (d.lo + d.hi));
          } else {
            Vector m = Vector::Zero(dim);
            for (const auto &a : d.atoms) {
              m += a.probability * a.z;
            }
            return m;
          }
        },
        size);
  }

  /// Largest Euclidean norm a jump can have.
  [[nodiscard]] double support_radius(int dim) const {
    return std::visit(
        [&](const auto &d) -> double {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, UniformJumps>) {
            return std::sqrt(static_cast<double>(dim)) *
                   std::max(std::abs(d.lo), std::abs(d.hi));
          } else {
            double r = 0.0;
            for (const auto &a : d.atoms) {
              r = std::max(r, a.z.norm());
            }
            return r;
          }
        },
        size);
  }

  [[nodiscard]] Vector sample(int dim, Rng &rng) const {
    return std::visit(
        [&](const auto &d) -> Vector {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, UniformJumps>) {
            Vector z(dim);
            for (int i = 0; i < dim; ++i) {
              z[i] = rng.uniform(d.lo, d.hi);
            }
            return z;
          } else {
            const double u = rng.uniform();
            double acc = 0.0;
            for (const auto &a : d.atoms) {
              acc += a.probability;
              if (u < acc) {
                return a.z;
              }
            }
            return d.atoms.back().z;
          }
        },
        size);
  }

  void validate(int dim) const {
    require(std::isfinite(intensity) && intensity >= 0.0,
            "jump intensity must be finite and non-negative");
    require(compensated, "only compensated jump measures are supported");
    if (const auto *d = std::get_if<DiscreteJumps>(&size)) {
      if (active()) {
        require(!d->atoms.empty(), "discrete jump distribution needs at least one atom");
      }
      double total = 0.0;
      for (const auto &a : d->atoms) {
        require(a.z.size() == dim, "jump atom has wrong dimension");
        require(a.probability >= 0.0, "jump atom probability must be non-negative");
        total += a.probability;
      }
      if (!d->atoms.empty()) {
        require(std::abs(total - 1.0) < 1e-9, "jump atom probabilities must sum to 1");
      }
    } else {
      const auto &u = std::get<UniformJumps>(size);
      require(u.lo <= u.hi, "uniform jump bounds must satisfy lo <= hi");
    }
    if (active()) {
      require(support_radius(dim) < 1.0, "jump sizes must lie strictly inside the unit ball");
    }
  }
};

/// Amplitude sigma times Levy increments; sigma is an n x n matrix (a scalar
/// amplitude is stored as a multiple of the identity).
struct NoiseSpec {
  Matrix sigma;
  JumpSpec jumps;

  [[nodiscard]] bool is_silent() const { return sigma.isZero(0.0); }
};

// ---------------------------------------------------------------------------
// Slow-fast model
// ---------------------------------------------------------------------------

/// dx = (A x + f(x, y)) dt + sigma1 dL
/// dy = (B y + g(x, y)) / eps dt + sigma2 dL_1^{1/eps}
struct SlowFastModel {
  Matrix A;
  Matrix B;
  DriftFn f;
  DriftFn g;
  NoiseSpec slow;
  NoiseSpec fast;
  double epsilon = 1.0;
  Vector x0;
  Vector y0;
  /// Backward decay rate of exp(A t); defaults to the forward rate when unset.
  std::optional<double> gamma_A_prime;
  std::string name;

  [[nodiscard]] int dim() const noexcept { return static_cast<int>(A.rows()); }

  /// Throws InvalidArgument when shapes or scalars are inconsistent.
  void check_well_formed() const {
    const int n = dim();
    require(n >= 1, "model dimension must be positive");
    require(A.rows() == n && A.cols() == n, "A must be n x n");
    require(B.rows() == n && B.cols() == n, "B must be n x n");
    require(f.dim() == n && g.dim() == n, "f and g must map into R^n");
    require(slow.sigma.rows() == n && slow.sigma.cols() == n, "sigma1 must be n x n");
    require(fast.sigma.rows() == n && fast.sigma.cols() == n, "sigma2 must be n x n");
    require(x0.size() == n && y0.size() == n, "x0 and y0 must have length n");
    require(std::isfinite(epsilon) && epsilon > 0.0, "epsilon must be positive");
    slow.jumps.validate(n);
    fast.jumps.validate(n);
  }

  [[nodiscard]] SlowFastModel with_epsilon(double eps) const {
    SlowFastModel m = *this;
    m.epsilon = eps;
    return m;
  }
};

/// Decay rates of exp(A t), exp(B t): gamma = -(largest real part).
struct DecayRates {
  double gamma_A = 0.0;
  double gamma_A_prime = 0.0;
  double gamma_B = 0.0;
};

[[nodiscard]] inline DecayRates decay_rates(const SlowFastModel &m) {
  DecayRates r;
  r.gamma_A = -spectral_abscissa(m.A);
  r.gamma_B = -spectral_abscissa(m.B);
  r.gamma_A_prime = m.gamma_A_prime.value_or(r.gamma_A);
  return r;
}

/// Largest L_g for which the fast equation's dissipativity bound holds.
[[nodiscard]] inline double lipschitz_g_bound(double gamma_B) {
  return std::min(std::sqrt(gamma_B / 6.0), gamma_B);
}

// ---------------------------------------------------------------------------
// Lipschitz probing
// ---------------------------------------------------------------------------

/// Axis-aligned box in the joint (x, y) space, length 2n.
struct ProbeBox {
  Vector lo;
  Vector hi;

  static ProbeBox symmetric(int dim, double half_width) {
    return {Vector::Constant(2 * dim, -half_width), Vector::Constant(2 * dim, half_width)};
  }
};

/// Lower bound on the Lipschitz constant of `fn`: the largest difference
/// quotient |fn(p) - fn(q)| / |p - q|_1 over sampled pairs in `box`.
[[nodiscard]] inline double estimate_lipschitz(const DriftFn &fn, const ProbeBox &box,
                                               int samples, Rng &rng) {
  const int n = fn.dim();
  require(samples >= 2, "estimate_lipschitz: at least two samples required");
  require(box.lo.size() == 2 * n && box.hi.size() == 2 * n,
          "estimate_lipschitz: box must have length 2n");
  for (Index i = 0; i < box.lo.size(); ++i) {
    if (!(box.hi[i] > box.lo[i])) {
      throw InvalidArgument("estimate_lipschitz: probe box is degenerate");
    }
  }
  const Vector width = box.hi - box.lo;
  auto draw = [&] {
    Vector p(2 * n);
    for (int i = 0; i < 2 * n; ++i) {
      p[i] = box.lo[i] + width[i] * rng.uniform();
    }
    return p;
  };
  auto eval = [&](const Vector &p, Vector &out) {
    const Vector x = p.head(n);
    const Vector y = p.tail(n);
    fn.eval(x, y, out);
  };

  Vector fp(n);
  Vector fq(n);
  double best = 0.0;
  auto consider = [&](const Vector &p, const Vector &q) {
    const double dist = (p - q).lpNorm<1>();
    if (dist <= 0.0) {
      return;
    }
    eval(p, fp);
    eval(q, fq);
    best = std::max(best, (fp - fq).norm() / dist);
  };

  for (int s = 0; s < samples; ++s) {
    const Vector p = draw();
    // Coordinate directions recover the exact constant of linear maps;
    // a random partner covers mixed directions.
    const double step = 1e-3 * width.minCoeff();
    for (int i = 0; i < 2 * n; ++i) {
      Vector q = p;
      q[i] += (q[i] + step <= box.hi[i]) ? step : -step;
      consider(p, q);
    }
    consider(p, draw());
  }
  return best;
}

// ---------------------------------------------------------------------------
// Assumption validation
// ---------------------------------------------------------------------------

enum class CheckStatus { Pass, Fail, Unverifiable };

[[nodiscard]] inline const char *to_string(CheckStatus s) {
  switch (s) {
  case CheckStatus::Pass: return "pass";
  case CheckStatus::Fail: return "fail";
  case CheckStatus::Unverifiable: return "unverifiable";
  }
  return "?";
}

struct AssumptionCheck {
  std::string id;
  CheckStatus status = CheckStatus::Unverifiable;
  std::string detail;
};

struct ValidationReport {
  DecayRates rates;
  double lipschitz_f_estimate = 0.0;
  double lipschitz_g_estimate = 0.0;
  double lipschitz_f = 0.0; ///< declared, or the probe estimate when undeclared
  double lipschitz_g = 0.0;
  std::vector<AssumptionCheck> checks;

  /// True when no check failed (unverifiable checks do not block).
  [[nodiscard]] bool passed() const {
    return std::none_of(checks.begin(), checks.end(),
                        [](const auto &c) { return c.status == CheckStatus::Fail; });
  }

  [[nodiscard]] CheckStatus status(const std::string &id) const {
    for (const auto &c : checks) {
      if (c.id == id) {
        return c.status;
      }
    }
    return CheckStatus::Unverifiable;
  }
};

struct ProbeOptions {
  double half_width = 3.0;
  std::optional<ProbeBox> box;
  int samples = 2000;
  std::uint64_t seed = 20240601;
};

namespace detail {
inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}
} // namespace detail

/// Checks spectral decay of A and B, the Lipschitz bound on g, the growth
/// bounds, and records the conditional-expectation regularity hypothesis as
/// unverifiable.
[[nodiscard]] inline ValidationReport validate_model(const SlowFastModel &m,
                                                     const ProbeOptions &opts = {}) {
  using detail::fmt_double;
  m.check_well_formed();
  const int n = m.dim();
  ValidationReport rep;
  rep.rates = decay_rates(m);

  {
    AssumptionCheck c{"spectral_decay", CheckStatus::Pass, ""};
    const bool a_ok = rep.rates.gamma_A > 0.0;
    const bool b_ok = rep.rates.gamma_B > 0.0;
    if (!a_ok || !b_ok) {
      c.status = CheckStatus::Fail;
    }
    c.detail = "gamma_A=" + fmt_double(rep.rates.gamma_A) +
               " gamma_B=" + fmt_double(rep.rates.gamma_B) +
               (a_ok ? "" : " (A is not Hurwitz)") + (b_ok ? "" : " (B is not Hurwitz)");
    rep.checks.push_back(c);
  }

  const ProbeBox box = opts.box.value_or(ProbeBox::symmetric(n, opts.half_width));
  Rng rng(opts.seed, 0, StreamRole::Probe);
  rep.lipschitz_f_estimate = estimate_lipschitz(m.f, box, opts.samples, rng);
  rep.lipschitz_g_estimate = estimate_lipschitz(m.g, box, opts.samples, rng);
  rep.lipschitz_f = m.f.constants.lipschitz.value_or(rep.lipschitz_f_estimate);
  rep.lipschitz_g = m.g.constants.lipschitz.value_or(rep.lipschitz_g_estimate);

  {
    AssumptionCheck c{"fast_lipschitz", CheckStatus::Pass, ""};
    const double bound = rep.rates.gamma_B > 0.0 ? lipschitz_g_bound(rep.rates.gamma_B) : 0.0;
    std::string detail = "L_g=" + fmt_double(rep.lipschitz_g) +
                         " bound=min(sqrt(gamma_B/6),gamma_B)=" + fmt_double(bound) +
                         " probe L_f=" + fmt_double(rep.lipschitz_f_estimate) +
                         " probe L_g=" + fmt_double(rep.lipschitz_g_estimate);
    if (!(rep.lipschitz_g < bound)) {
      c.status = CheckStatus::Fail;
      detail += " (L_g exceeds bound)";
    }
    constexpr double slack = 1e-9;
    if (m.f.constants.lipschitz &&
        rep.lipschitz_f_estimate > *m.f.constants.lipschitz * (1 + slack) + slack) {
      c.status = CheckStatus::Fail;
      detail += " (declared L_f below probe estimate)";
    }
    if (m.g.constants.lipschitz &&
        rep.lipschitz_g_estimate > *m.g.constants.lipschitz * (1 + slack) + slack) {
      c.status = CheckStatus::Fail;
      detail += " (declared L_g below probe estimate)";
    }
    if (!m.f.constants.lipschitz || !m.g.constants.lipschitz) {
      detail += " (undeclared constants replaced by probe estimates)";
    }
    c.detail = detail;
    rep.checks.push_back(c);
  }

  {
    AssumptionCheck c{"linear_growth", CheckStatus::Pass, ""};
    const bool declared = m.f.constants.growth.has_value() && m.g.constants.growth.has_value();
    if (!declared) {
      c.status = CheckStatus::Unverifiable;
      c.detail = "growth constants C_f, C_g not declared";
    } else {
      // |f(x,y)| <= L_f (C_f + |x| + |y|) on probe samples.
      const double Cf = *m.f.constants.growth;
      const double Cg = *m.g.constants.growth;
      Vector out(n);
      double worst = 0.0;
      for (int s = 0; s < opts.samples; ++s) {
        Vector x(n), y(n);
        for (int i = 0; i < n; ++i) {
          x[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * rng.uniform();
          y[i] = box.lo[n + i] + (box.hi[n + i] - box.lo[n + i]) * rng.uniform();
        }
        m.f.eval(x, y, out);
        worst = std::max(worst, out.norm() - rep.lipschitz_f * (Cf + x.norm() + y.norm()));
        m.g.eval(x, y, out);
        worst = std::max(worst, out.norm() - rep.lipschitz_g * (Cg + x.norm() + y.norm()));
      }
      if (worst > 1e-12) {
        c.status = CheckStatus::Fail;
      }
      c.detail = "max growth-bound excess on probe box " + fmt_double(worst);
    }
    rep.checks.push_back(c);
  }

  rep.checks.push_back({"conditional_regularity", CheckStatus::Unverifiable,
                        "regularity of conditional expectations along the asymptotic "
                        "manifold is not machine-checkable; documented only"});
  return rep;
}

/// Throws AssumptionViolation unless both linear parts are Hurwitz.
inline void require_hurwitz(const SlowFastModel &m) {
  const auto r = decay_rates(m);
  if (!(r.gamma_A > 0.0) || !(r.gamma_B > 0.0)) {
    throw AssumptionViolation("A and B must have eigenvalues with negative real part");
  }
}

} // namespace slowfast
