#pragma once

// Acceptance checks against analytic oracles on the benchmark models,
// shared by the acceptance test and the `verify` subcommand.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "slowfast/averaging.hpp"
#include "slowfast/benchmarks.hpp"
#include "slowfast/deviation.hpp"
#include "slowfast/harness.hpp"
#include "slowfast/manifold.hpp"

namespace slowfast {

struct CriterionResult {
  std::string id;
  bool pass = false;
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 20240601;
  unsigned workers = 1;
  std::vector<std::string> groups; ///< subset of acceptance_groups(); empty runs all
};

/// `PASS|FAIL <id> <value> <tolerance>`
[[nodiscard]] inline std::string format_line(const CriterionResult &r) {
  char buf[64], tol[64];
  std::snprintf(buf, sizeof buf, "%.6g", r.value);
  std::snprintf(tol, sizeof tol, "%.6g", r.tolerance);
  return std::string(r.pass ? "PASS " : "FAIL ") + r.id + " " + buf + " " + tol;
}

namespace verify_detail {

inline CriterionResult within(std::string id, double estimate, double target, double tol,
                              std::string detail = {}) {
  const double diff = std::abs(estimate - target);
  return {std::move(id), diff <= tol, diff, tol, std::move(detail)};
}

inline CriterionResult at_least(std::string id, double value, double threshold,
                                std::string detail = {}) {
  return {std::move(id), value >= threshold, value, threshold, std::move(detail)};
}

inline CriterionResult at_most(std::string id, double value, double threshold,
                               std::string detail = {}) {
  return {std::move(id), value <= threshold, value, threshold, std::move(detail)};
}

inline std::string fmt(const char *f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Runs `body`, appending its results and a runtime line.
inline void timed(std::vector<CriterionResult> &out, const std::string &runtime_id, double limit,
                  const std::function<void(std::vector<CriterionResult> &)> &body) {
  const auto t0 = std::chrono::steady_clock::now();
  body(out);
  out.push_back(at_most(runtime_id, seconds_since(t0), limit, "seconds"));
}

} // namespace verify_detail

/// Ergodic fbar estimates against the OU stationary mean -B^{-1} g.
inline void verify_fbar(std::vector<CriterionResult> &out, const VerifyOptions &o) {
  using namespace verify_detail;
  timed(out, "averaging.fbar_runtime", 10.0, [&](auto &res) {
    const Vector x = Vector::Constant(1, 1.0);
    Rng r1(o.seed, 1, StreamRole::Auxiliary);
    const FbarEstimate a = estimate_fbar(linear_benchmark(), x, 5.0, 505.0, 0.01, r1, 16);
    res.push_back(within("averaging.fbar_linear", a.value[0], 0.0, 3.0 * a.standard_error[0],
                         fmt("estimate %.6g se %.3g", a.value[0], a.standard_error[0])));
    Rng r2(o.seed, 2, StreamRole::Auxiliary);
    const FbarEstimate b =
        estimate_fbar(constant_forcing_benchmark(), x, 5.0, 505.0, 0.01, r2, 16);
    res.push_back(within("averaging.fbar_constant_forcing", b.value[0], 0.5, 3.0 * b.standard_error[0],
                         fmt("estimate %.17g se %.3g", b.value[0], b.standard_error[0])));
  });
}

/// Relaxation rate of E f(x, y_x(t)) on the linear benchmark; the closed
/// form rate is b = 2.
inline void verify_mixing(std::vector<CriterionResult> &out, const VerifyOptions &o) {
  using namespace verify_detail;
  timed(out, "averaging.mixing_runtime", 30.0, [&](auto &res) {
    Rng rng(o.seed, 3, StreamRole::Auxiliary);
    const std::vector<Vector> starts{Vector::Constant(1, 2.0), Vector::Constant(1, -2.0)};
    const MixingReport rep =
        mixing_diagnostic(linear_benchmark(), Vector::Constant(1, 1.0), starts, 3.0, 0.01, 2000, rng);
    res.push_back(within("averaging.mixing_rate", rep.eta_empirical, 2.0, 0.15 * 2.0,
                         fmt("empirical %.6g (se %.3g), closed-form eta %.6g reported only",
                             rep.eta_empirical, rep.eta_empirical_se, rep.eta_bound)));
  });
}

/// Log-log slope of E sup |x^eps - x|^2 against eps.
inline void verify_strong_rate(std::vector<CriterionResult> &out, const VerifyOptions &o) {
  using namespace verify_detail;
  timed(out, "averaging.strong_runtime", 300.0, [&](auto &res) {
    const SlowFastModel m = linear_benchmark();
    const AveragedModel am = build_averaged_model(m);
    std::vector<double> eps;
    for (int k = 4; k <= 10; ++k) {
      eps.push_back(std::ldexp(1.0, -k));
    }
    StrongErrorOptions so;
    so.workers = o.workers;
    const RateReport rep = strong_error_experiment(m, am, eps, DeltaRule{}, 1.0, 200, o.seed, so);
    res.push_back(at_least("averaging.strong_rate", rep.fit.lower_bound_95, 0.25,
                           fmt("slope %.4g, 95%% lower bound %.4g, theory exponent %.4g",
                               rep.fit.slope, rep.fit.lower_bound_95, 1.0 / 3.0)));
  });
}

/// Stationary OU autocovariance 0.25 e^{-2s} and Htilde = sigma2^2 / b^2.
inline void verify_kernel(std::vector<CriterionResult> &out, const VerifyOptions &o) {
  using namespace verify_detail;
  timed(out, "deviation.kernel_runtime", 60.0, [&](auto &res) {
    Rng rng(o.seed, 4, StreamRole::Auxiliary);
    KernelOptions ko;
    ko.replicas = 32;
    ko.fbar = Vector::Zero(1);
    const KernelEstimate k = autocovariance_kernel(linear_benchmark(), Vector::Constant(1, 1.0),
                                                   lag_grid(4.0, 0.05), 5.0, 2005.0, 0.005, rng, ko);
    const double h0 = k.H[0](0, 0), se0 = k.stderr_[0](0, 0);
    const double h1 = k.H[20](0, 0), se1 = k.stderr_[20](0, 0);
    res.push_back(within("deviation.kernel_h0", h0, 0.25, 3.0 * se0, fmt("H(0) %.6g se %.3g", h0, se0)));
    res.push_back(within("deviation.kernel_h1", h1, 0.25 * std::exp(-2.0), 3.0 * se1,
                         fmt("H(1) %.6g se %.3g", h1, se1)));
    const double Ht = diffusion_matrix(k)(0, 0);
    res.push_back(within("deviation.diffusion_matrix", Ht, 0.25, 0.05 * 0.25, fmt("Htilde %.6g", Ht)));
  });
}

/// theta^eps(1) = (x^eps(1) - x(1)) / sqrt(eps) on the linear benchmark
/// against the Gaussian limit and against simulate_deviation samples.
inline void verify_normal_deviation(std::vector<CriterionResult> &out, const VerifyOptions &o,
                                    int N = 10000) {
  using namespace verify_detail;
  timed(out, "deviation.theta_runtime", 600.0, [&](auto &res) {
    const double eps = 1e-3, T = 1.0, dt = eps / 10.0;
    const SlowFastModel m = linear_benchmark(eps);
    const AveragedModel am = build_averaged_model(m);
    Rng ra(o.seed, 5, StreamRole::Auxiliary);
    const double xbar = simulate_averaged(am, T, dt, ra).final_state()[0];
    const EnsembleTask task = [&](const StreamFactory &sf) -> std::optional<Vector> {
      Rng rng = sf.stream(StreamRole::SlowNoise);
      const auto [x, y] = simulate_slow_fast(m, T, dt, rng);
      if (x.diverged) {
        return std::nullopt;
      }
      return Vector::Constant(1, (x.final_state()[0] - xbar) / std::sqrt(eps));
    };
    const Ensemble ens = run_ensemble("theta", task, static_cast<std::size_t>(N), o.seed, o.workers);
    const std::vector<double> theta = ens.column(0);
    const SampleStats s = summarize(theta);
    const double var_oracle = 0.25 / 2.0 * (1.0 - std::exp(-2.0));
    res.push_back(within("deviation.theta_mean", s.mean, 0.0, 3.0 * s.se_mean,
                         fmt("mean %.5g se %.3g", s.mean, s.se_mean)));
    res.push_back(within("deviation.theta_variance", s.variance, var_oracle, 3.0 * s.se_variance,
                         fmt("variance %.6g oracle %.6g se %.3g", s.variance, var_oracle, s.se_variance)));

    DeviationOptions dopt;
    dopt.seed = derive_seed(o.seed, 6, StreamRole::Auxiliary);
    const DeviationModel dm = build_deviation_model(m, am, dopt);
    Rng rx(o.seed, 7, StreamRole::Auxiliary);
    const Trajectory xpath = simulate_averaged(am, T, 1e-3, rx);
    const EnsembleTask lim = [&](const StreamFactory &sf) -> std::optional<Vector> {
      Rng rng = sf.stream(StreamRole::DeviationNoise);
      const Trajectory th = simulate_deviation(dm, xpath, T, 1e-3, rng);
      return th.final_state();
    };
    const Ensemble le = run_ensemble("theta_limit", lim, static_cast<std::size_t>(N),
                                     derive_seed(o.seed, 8, StreamRole::Auxiliary), o.workers);
    const TwoSampleReport ks = two_sample_compare(theta, le.column(0), 0.01);
    const auto &c = ks.coordinates.front();
    res.push_back(CriterionResult{"deviation.theta_law", ks.pass, c.cdf_distance, c.critical_value,
                                  fmt("KS distance %.4g critical %.4g Htilde %.6g", c.cdf_distance,
                                      c.critical_value, dm.htilde.constant_H()(0, 0))});
  });
}

/// Lyapunov-Perron fixed point: closed form for constant fast forcing,
/// contraction of the sweeps, Lipschitz graph, truncation independence.
inline void verify_lyapunov_perron(std::vector<CriterionResult> &out, const VerifyOptions &o) {
  using namespace verify_detail;
  timed(out, "manifold.lp_runtime", 60.0, [&](auto &res) {
    const double step = 0.01;
    {
      const SlowFastModel m = constant_forcing_benchmark(0.05);
      Rng rng(o.seed, 9, StreamRole::Auxiliary);
      const ManifoldNoise w = sample_manifold_noise(m, 15.0, 0.0, step, rng);
      const ManifoldSolution s = lyapunov_perron_solve(m, 0.05, Vector::Constant(1, 1.0), w);
      res.push_back(within("manifold.lp_constant_forcing", s.h_value[0], 0.5, 1e-6,
                           fmt("h %.17g", s.h_value[0])));
    }
    const double eps = 0.05;
    const SlowFastModel m = tanh_benchmark(eps);
    Rng rng(o.seed, 10, StreamRole::Auxiliary);
    LyapunovPerronOptions lo;
    const double T_neg = 30.0 / decay_rates(m).gamma_B;
    const ManifoldNoise w = sample_manifold_noise(m, 2.0 * T_neg, 0.0, step, rng);
    const ManifoldSolution base = lyapunov_perron_solve(m, eps, Vector::Constant(1, 0.5), w, lo);
    res.push_back(at_most("manifold.lp_contraction", base.max_residual_ratio(), base.rho + 0.05,
                          fmt("max residual ratio %.4g rho %.4g rho_hat %.4g", base.max_residual_ratio(),
                              base.rho, base.rho_hat)));

    Rng pairs(o.seed, 11, StreamRole::Auxiliary);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Vector a = Vector::Constant(1, pairs.uniform(-3.0, 3.0));
      const Vector b = Vector::Constant(1, pairs.uniform(-3.0, 3.0));
      const double du = (a - b).norm();
      if (du == 0.0) {
        continue;
      }
      const double dh = (lyapunov_perron_solve(m, eps, a, w, lo).h_value -
                         lyapunov_perron_solve(m, eps, b, w, lo).h_value).norm();
      worst = std::max(worst, dh / du);
    }
    res.push_back(at_most("manifold.lp_lipschitz", worst, base.L_h,
                          fmt("largest difference quotient %.4g, L_h %.4g", worst, base.L_h)));

    LyapunovPerronOptions lo2 = lo;
    lo2.T_neg = 2.0 * T_neg;
    const ManifoldSolution longer = lyapunov_perron_solve(m, eps, Vector::Constant(1, 0.5), w, lo2);
    const double change = (longer.h_value - base.h_value).norm();
    res.push_back(at_most("manifold.lp_truncation", change, lo.tol, fmt("|h(2T) - h(T)| %.3g", change)));
  });
}

namespace verify_detail {
struct TrackingEnsemble {
  std::vector<double> t;
  std::vector<double> mean_distance, se_distance, mean_envelope;
  double rate = 0.0;
  double gamma = 0.0;
};

inline TrackingEnsemble tracking_ensemble(const SlowFastModel &m, double eps, int realizations,
                                          double T, std::uint64_t seed) {
  const double step = 0.01;
  const double T_neg = 30.0 / decay_rates(m).gamma_B;
  TrackingEnsemble te;
  std::vector<std::vector<double>> ds, envs;
  for (int r = 0; r < realizations; ++r) {
    Rng rng(seed, static_cast<std::uint64_t>(r), StreamRole::Auxiliary);
    const ManifoldNoise w = sample_manifold_noise(m, T_neg, T, step, rng);
    const Vector u_off = Vector::Constant(1, rng.uniform(-1.0, 1.0));
    LyapunovPerronOptions lo;
    const Vector h_off = lyapunov_perron_solve(m, eps, u_off, w, lo).h_value;
    const Vector v_off = h_off + Vector::Constant(1, rng.uniform(0.5, 1.5));
    const TrackingPartner p = find_tracking_partner(m, eps, u_off, v_off, w, T, lo);
    const TrackingResult tr = tracking_check(m, eps, {p.u0, p.h}, {u_off, v_off}, T, w);
    te.t = tr.t;
    te.gamma = tr.gamma;
    ds.push_back(tr.distance);
    envs.push_back(tr.envelope);
  }
  const std::size_t P = te.t.size();
  for (std::size_t k = 0; k < P; ++k) {
    std::vector<double> col, ecol;
    for (std::size_t r = 0; r < ds.size(); ++r) {
      col.push_back(ds[r][k]);
      ecol.push_back(envs[r][k]);
    }
    const SampleStats s = summarize(col);
    te.mean_distance.push_back(s.mean);
    te.se_distance.push_back(s.se_mean);
    te.mean_envelope.push_back(summarize(ecol).mean);
  }
  te.rate = fit_exponential_rate(te.t, te.mean_distance, 1e-9 * te.mean_distance.front());
  return te;
}
} // namespace verify_detail

/// Distance between an off-manifold trajectory and its manifold partner.
inline void verify_tracking(std::vector<CriterionResult> &out, const VerifyOptions &o) {
  using namespace verify_detail;
  timed(out, "manifold.tracking_runtime", 60.0, [&](auto &res) {
    const TrackingEnsemble lin = tracking_ensemble(linear_benchmark(0.05), 0.05, 10, 8.0,
                                                   derive_seed(o.seed, 12, StreamRole::Auxiliary));
    res.push_back(within("manifold.tracking_linear_rate", lin.rate, 2.0, 0.1 * 2.0,
                         fmt("fitted rate %.5g", lin.rate)));
    const TrackingEnsemble th = tracking_ensemble(tanh_benchmark(0.05), 0.05, 20, 8.0,
                                                  derive_seed(o.seed, 13, StreamRole::Auxiliary));
    res.push_back(at_least("manifold.tracking_tanh_rate", th.rate, th.gamma,
                           fmt("fitted rate %.5g gamma %.5g", th.rate, th.gamma)));
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < th.t.size(); ++k) {
      worst = std::max(worst, th.mean_distance[k] - th.mean_envelope[k] - 2.0 * th.se_distance[k]);
    }
    res.push_back(at_most("manifold.tracking_envelope", worst, 0.0,
                          "max over t of mean distance - envelope - 2 SE"));
  });
}

/// |h^eps - h^0| for decreasing eps on shared realizations.
inline void verify_asymptotic_manifold(std::vector<CriterionResult> &out, const VerifyOptions &o) {
  using namespace verify_detail;
  timed(out, "manifold.asymptotic_runtime", 120.0, [&](auto &res) {
    const std::vector<double> eps{0.1, 0.05, 0.025};
    const SlowFastModel m = tanh_benchmark();
    const double T_neg = 30.0 / decay_rates(m).gamma_B;
    std::vector<std::vector<double>> gaps(eps.size());
    for (int r = 0; r < 20; ++r) {
      Rng rng(derive_seed(o.seed, 14, StreamRole::Auxiliary), static_cast<std::uint64_t>(r),
              StreamRole::Auxiliary);
      const ManifoldNoise w = sample_manifold_noise(m, T_neg, 0.0, 0.01, rng);
      const Vector u0 = Vector::Constant(1, rng.uniform(-2.0, 2.0));
      const Vector h0 = asymptotic_manifold_solve(m, u0, w).h_value;
      for (std::size_t e = 0; e < eps.size(); ++e) {
        gaps[e].push_back((lyapunov_perron_solve(m, eps[e], u0, w).h_value - h0).norm());
      }
    }
    double worst = -std::numeric_limits<double>::infinity();
    std::string detail = "mean gaps";
    for (std::size_t e = 0; e < eps.size(); ++e) {
      const SampleStats s = summarize(gaps[e]);
      detail += fmt(" %.4g", s.mean);
      if (e > 0) {
        const SampleStats p = summarize(gaps[e - 1]);
        worst = std::max(worst, s.mean - p.mean - 2.0 * std::hypot(s.se_mean, p.se_mean));
      }
    }
    res.push_back(at_most("manifold.asymptotic_convergence", worst, 0.0, detail));
  });
}

/// E sup |theta_2|^2 halves with eps.
inline void verify_residual(std::vector<CriterionResult> &out, const VerifyOptions &o) {
  using namespace verify_detail;
  timed(out, "deviation.residual_runtime", 300.0, [&](auto &res) {
    const SlowFastModel m = tanh_benchmark();
    const AveragedModel am = build_averaged_model(m);
    const double e1 = 0.02, e2 = 0.01;
    const ResidualEstimate a = residual_theta2(m, am, e1, 1.0, e1 / 10.0, 400,
                                               derive_seed(o.seed, 15, StreamRole::Auxiliary), o.workers);
    const ResidualEstimate b = residual_theta2(m, am, e2, 1.0, e2 / 10.0, 400,
                                               derive_seed(o.seed, 16, StreamRole::Auxiliary), o.workers);
    const double tol = 2.0 * std::hypot(a.standard_error, b.standard_error);
    res.push_back(at_most("deviation.residual_shrinks", b.mean - a.mean, tol,
                          fmt("E sup|theta2|^2: %.4g at eps=0.02, %.4g at eps=0.01", a.mean, b.mean)));
  });
}

/// Determinism, compensated jumps, matrix square roots, KS calibration.
inline void verify_infrastructure(std::vector<CriterionResult> &out, const VerifyOptions &o) {
  using namespace verify_detail;
  timed(out, "harness.infrastructure_runtime", 120.0, [&](auto &res) {
    {
      const SlowFastModel m = tanh_benchmark(0.05);
      const EnsembleTask task = [&](const StreamFactory &sf) -> std::optional<Vector> {
        Rng rng = sf.stream(StreamRole::SlowNoise);
        return simulate_slow_fast(m, 1.0, 0.005, rng).first.final_state();
      };
      const Ensemble a = run_ensemble("determinism", task, 64, o.seed, 1);
      const Ensemble b = run_ensemble("determinism", task, 64, o.seed, 4);
      const SampleStats sa = summarize(a.column(0)), sb = summarize(b.column(0));
      bool same = a.outputs.size() == b.outputs.size();
      for (std::size_t i = 0; same && i < a.outputs.size(); ++i) {
        same = a.outputs[i] == b.outputs[i];
      }
      same = same && sa.mean == sb.mean && sa.variance == sb.variance;
      res.push_back(CriterionResult{"harness.worker_determinism", same, same ? 0.0 : 1.0, 0.0,
                                    "1 vs 4 workers, bitwise"});
    }
    {
      NoiseSpec spec;
      spec.sigma = Matrix::Identity(1, 1);
      spec.jumps.intensity = 5.0;
      spec.jumps.size = UniformJumps{0.1, 0.9};
      NoiseSpec jumps_only = spec;
      const auto grid = make_grid(0.0, 1.0, 0.01);
      std::vector<double> ends;
      for (int p = 0; p < 4000; ++p) {
        Rng rng(o.seed, static_cast<std::uint64_t>(p), StreamRole::Probe);
        const IncrementStream s = sample_increments(jumps_only, grid, rng);
        ends.push_back(s.dJ.sum());
      }
      const SampleStats st = summarize(ends);
      res.push_back(within("noise.compensated_mean", st.mean, 0.0, 3.0 * st.se_mean,
                           fmt("mean %.4g se %.3g", st.mean, st.se_mean)));
    }
    {
      Rng rng(o.seed, 17, StreamRole::Auxiliary);
      double worst = 0.0;
      for (int t = 0; t < 50; ++t) {
        Matrix G(5, 5);
        for (Index i = 0; i < 25; ++i) {
          G.data()[i] = rng.normal();
        }
        const Matrix M = G * G.transpose();
        const Matrix S = matrix_sqrt_psd(M);
        worst = std::max(worst, (S * S - M).norm() / std::max(1.0, M.norm()));
      }
      res.push_back(at_most("linalg.matrix_sqrt", worst, 1e-10, "relative Frobenius error"));
    }
    {
      int passes = 0;
      for (std::uint64_t s = 0; s < 100; ++s) {
        Rng rng(s, 0, StreamRole::Auxiliary);
        std::vector<double> a(500), b(500);
        for (auto &v : a) {
          v = rng.normal();
        }
        for (auto &v : b) {
          v = rng.normal();
        }
        passes += two_sample_compare(a, b, 0.01).pass ? 1 : 0;
      }
      res.push_back(at_least("harness.ks_calibration", passes / 100.0, 0.98,
                             "same-law pass rate over seeds 0..99"));
    }
  });
}

using VerifyGroup = std::function<void(std::vector<CriterionResult> &, const VerifyOptions &)>;

[[nodiscard]] inline const std::vector<std::pair<std::string, VerifyGroup>> &acceptance_groups() {
  static const std::vector<std::pair<std::string, VerifyGroup>> all{
      {"fbar", verify_fbar},
      {"mixing", verify_mixing},
      {"strong_rate", verify_strong_rate},
      {"kernel", [](auto &r, const auto &v) { verify_kernel(r, v); }},
      {"normal_deviation", [](auto &r, const auto &v) { verify_normal_deviation(r, v); }},
      {"lyapunov_perron", verify_lyapunov_perron},
      {"tracking", verify_tracking},
      {"asymptotic_manifold", verify_asymptotic_manifold},
      {"residual", verify_residual},
      {"infrastructure", verify_infrastructure}};
  return all;
}

/// Every selected check, in criterion order.
[[nodiscard]] inline std::vector<CriterionResult> run_acceptance(const VerifyOptions &o,
                                                                 std::ostream *progress = nullptr) {
  const auto &groups = acceptance_groups();
  for (const auto &g : o.groups) {
    require(std::any_of(groups.begin(), groups.end(), [&](const auto &p) { return p.first == g; }),
            "unknown acceptance group '" + g + "'");
  }
  std::vector<CriterionResult> out;
  for (const auto &[name, f] : groups) {
    if (!o.groups.empty() && std::find(o.groups.begin(), o.groups.end(), name) == o.groups.end()) {
      continue;
    }
    const std::size_t before = out.size();
    f(out, o);
    if (progress) {
      for (std::size_t i = before; i < out.size(); ++i) {
        *progress << format_line(out[i]) << '\n';
        if (!out[i].detail.empty()) {
          *progress << "# " << out[i].detail << '\n';
        }
      }
      progress->flush();
    }
  }
  return out;
}

} // namespace slowfast
