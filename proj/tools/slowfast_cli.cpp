// slowfast: command-line front end for the slow-fast SDE toolkit.
//
//   slowfast validate --config linear.json
//   slowfast simulate --config linear.json --seed 7 --out results
//   slowfast verify   --config verify.json --workers 2
//
// Exit codes: 0 ok, 1 usage or I/O error, 2 validation failure, 3 a check failed.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "slowfast/slowfast.hpp"

namespace fs = std::filesystem;
using namespace slowfast;

namespace {

constexpr std::uint64_t kDefaultSeed = 20240601;

enum ExitCode { kOk = 0, kUsage = 1, kInvalid = 2, kCheckFailed = 3 };

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<std::string> out;
};

/// Parsed experiment config plus the resolved run settings.
struct Experiment {
  json doc;
  fs::path base_dir;
  std::optional<SlowFastModel> model;
  std::uint64_t seed = kDefaultSeed;
  unsigned workers = 1;
  fs::path out_dir = ".";

  [[nodiscard]] json block(const std::string &name) const {
    return doc.contains(name) ? doc.at(name) : json::object();
  }

  [[nodiscard]] const SlowFastModel &require_model() const {
    if (!model) {
      throw IoError("config has no \"model\" entry");
    }
    return *model;
  }
};

Experiment load_experiment(const CommonFlags &flags) {
  Experiment e;
  e.doc = read_json_file(flags.config);
  if (!e.doc.is_object()) {
    throw IoError("config must be a JSON object");
  }
  e.base_dir = fs::path(flags.config).parent_path();
  if (e.doc.contains("model")) {
    const json &m = e.doc.at("model");
    if (m.is_string()) {
      fs::path p = m.get<std::string>();
      if (p.is_relative()) {
        p = e.base_dir / p;
      }
      e.model = load_model(p.string());
    } else {
      e.model = model_from_json(m);
    }
  } else if (e.doc.contains("A")) {
    e.model = model_from_json(e.doc); // a bare model document
  }

  e.seed = e.doc.value("seed", kDefaultSeed);
  if (const char *env = std::getenv("SEED"); env && *env) {
    try {
      e.seed = std::stoull(env);
    } catch (const std::exception &) {
      throw IoError(std::string("SEED is not an unsigned integer: ") + env);
    }
  }
  if (flags.seed) {
    e.seed = *flags.seed;
  }
  e.workers = flags.workers.value_or(e.doc.value("workers", 1u));
  if (flags.out) {
    e.out_dir = *flags.out;
  } else if (e.doc.contains("output_dir")) {
    e.out_dir = e.base_dir / e.doc.at("output_dir").get<std::string>();
  }
  return e;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

/// Writes `<command>-<timestamp>-<seed>.csv` and `.json` into the output dir.
class ArtifactWriter {
public:
  ArtifactWriter(const Experiment &e, std::string command)
      : dir_(e.out_dir), stem_(command + "-" + utc_timestamp() + "-" + std::to_string(e.seed)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) {
      throw IoError("cannot create output directory '" + dir_.string() + "': " + ec.message());
    }
  }

  void csv(const std::string &content) const { write(stem_ + ".csv", content); }
  void json_report(const json &j) const { write(stem_ + ".json", j.dump(2) + "\n"); }

private:
  void write(const std::string &name, const std::string &content) const {
    const fs::path p = dir_ / name;
    std::ofstream out(p, std::ios::binary);
    if (!out || !(out << content)) {
      throw IoError("cannot write '" + p.string() + "'");
    }
    std::cerr << "wrote " << p.string() << '\n';
  }

  fs::path dir_;
  std::string stem_;
};

/// Prints the PASS/FAIL lines and returns the process exit code.
int report(const std::vector<CriterionResult> &checks, json &out) {
  json arr = json::array();
  bool ok = true;
  for (const auto &c : checks) {
    std::cout << format_line(c) << '\n';
    arr.push_back({{"id", c.id}, {"pass", c.pass}, {"value", c.value}, {"tolerance", c.tolerance},
                   {"detail", c.detail}});
    ok = ok && c.pass;
  }
  out["checks"] = arr;
  out["passed"] = ok;
  return ok ? kOk : kCheckFailed;
}

json run_header(const Experiment &e, const std::string &command) {
  json j{{"command", command}, {"seed", e.seed}, {"workers", e.workers}};
  if (e.model) {
    j["model"] = model_to_json(*e.model);
  }
  return j;
}

/// Validation gate shared by every command that needs a model.
const SlowFastModel &validated_model(const Experiment &e) {
  const SlowFastModel &m = e.require_model();
  const ValidationReport r = validate_model(m);
  if (!r.passed()) {
    std::cout << to_json(r).dump(2) << '\n';
    throw AssumptionViolation("model '" + m.name + "' failed validation");
  }
  return m;
}

std::string joint_csv(const std::vector<double> &grid,
                      const std::vector<std::pair<std::string, const Matrix *>> &columns) {
  std::ostringstream os;
  os << 't';
  for (const auto &[prefix, M] : columns) {
    for (Index i = 0; i < M->rows(); ++i) {
      os << ',' << prefix << i + 1;
    }
  }
  os << '\n';
  for (std::size_t k = 0; k < grid.size(); ++k) {
    detail::write_num(os, grid[k]);
    for (const auto &[prefix, M] : columns) {
      for (Index i = 0; i < M->rows(); ++i) {
        os << ',';
        detail::write_num(os, (*M)(i, static_cast<Index>(k)));
      }
    }
    os << '\n';
  }
  return os.str();
}

Vector vector_or(const json &b, const char *key, const Vector &fallback) {
  return b.contains(key) ? io::vector_from_json(b.at(key), static_cast<int>(fallback.size()), key)
                         : fallback;
}

// ---------------------------------------------------------------------------

int cmd_validate(const Experiment &e) {
  const ValidationReport r = validate_model(e.require_model());
  std::cout << to_json(r).dump(2) << '\n';
  return r.passed() ? kOk : kInvalid;
}

int cmd_simulate(const Experiment &e) {
  SlowFastModel m = validated_model(e);
  const json b = e.block("simulate");
  m = m.with_epsilon(b.value("epsilon", m.epsilon));
  const double T = b.value("T", 1.0);
  const double dt = b.value("dt", m.epsilon / 10.0);
  Rng rng(e.seed, 0, StreamRole::SlowNoise);
  const auto [x, y] = simulate_slow_fast(m, T, dt, rng);

  json out = run_header(e, "simulate");
  out["epsilon"] = m.epsilon;
  out["T"] = T;
  out["dt"] = dt;
  out["points"] = x.points();
  out["x_final"] = io::to_json(Vector(x.final_state()));
  out["y_final"] = io::to_json(Vector(y.final_state()));
  const int rc = report({{"simulate.finite_path", !x.diverged && !y.diverged,
                          static_cast<double>(x.points()), 0.0, "computed grid points"}},
                        out);
  const ArtifactWriter w(e, "simulate");
  std::ostringstream os;
  write_csv(os, x, y);
  w.csv(os.str());
  w.json_report(out);
  return rc;
}

int cmd_average(const Experiment &e) {
  const SlowFastModel &m = validated_model(e);
  const json b = e.block("average");
  AveragingOptions ao;
  ao.seed = e.seed;
  ao.workers = e.workers;
  ao.table_nodes = b.value("table_nodes", ao.table_nodes);
  ao.table_half_width = b.value("table_half_width", ao.table_half_width);
  ao.horizon = b.value("horizon", ao.horizon);
  const AveragedModel am = build_averaged_model(m, ao);
  const Vector x = vector_or(b, "x", m.x0);

  json out = run_header(e, "average");
  out["fbar_kind"] = to_string(am.fbar.kind());
  out["fbar_at_x"] = {{"x", io::to_json(x)}, {"value", io::to_json(am.fbar(x))}};
  std::vector<CriterionResult> checks;

  const ValidationReport vr = validate_model(m);
  const FbarLipschitzCheck lc =
      check_fbar_lipschitz(am, vr.lipschitz_f, vr.lipschitz_g, vr.rates.gamma_B);
  checks.push_back({"average.fbar_lipschitz", lc.pass, lc.estimate, lc.bound,
                    "probed Lipschitz constant of fbar against its bound"});

  std::ostringstream csv;
  if (b.contains("epsilons")) {
    const auto eps = b.at("epsilons").get<std::vector<double>>();
    DeltaRule rule;
    rule.exponent = b.value("delta_exponent", rule.exponent);
    StrongErrorOptions so;
    so.workers = e.workers;
    so.dt_ratio = b.value("dt_ratio", so.dt_ratio);
    const RateReport rr =
        strong_error_experiment(m, am, eps, rule, b.value("T", 1.0), b.value("N", 200), e.seed, so);
    out["strong_error"] = to_json(rr);
    checks.push_back({"average.strong_error_monotone", rr.monotone(2.0), rr.fit.slope, 2.0,
                      "errors non-increasing in eps up to 2 SE; value is the fitted slope"});
    write_rate_csv(csv, rr);
  }
  if (b.contains("mixing")) {
    const json mb = b.at("mixing");
    std::vector<Vector> starts;
    for (const auto &s : mb.at("y0")) {
      starts.push_back(io::vector_from_json(s, m.dim(), "mixing.y0"));
    }
    Rng rng(e.seed, 0, StreamRole::Auxiliary);
    const MixingReport mr = mixing_diagnostic(m, x, starts, mb.value("T", 3.0), mb.value("dt", 0.01),
                                              mb.value("N", 400), rng);
    out["mixing"] = to_json(mr);
    checks.push_back({"average.mixing_rate_positive", mr.eta_empirical > 0.0, mr.eta_empirical, 0.0,
                      "fitted exponential mixing rate"});
    if (!b.contains("epsilons")) {
      write_mixing_csv(csv, mr);
    }
  }
  if (csv.str().empty()) {
    // Without experiments the CSV holds fbar along a line through x in coordinate 1.
    csv << "x1,fbar1\n";
    const int pts = b.value("profile_points", 21);
    const double hw = b.value("profile_half_width", 3.0);
    for (int k = 0; k < pts; ++k) {
      Vector p = x;
      p[0] = -hw + 2.0 * hw * k / std::max(1, pts - 1);
      detail::write_num(csv, p[0]);
      csv << ',';
      detail::write_num(csv, am.fbar(p)[0]);
      csv << '\n';
    }
  }
  const int rc = report(checks, out);
  const ArtifactWriter w(e, "average");
  w.csv(csv.str());
  w.json_report(out);
  return rc;
}

int cmd_manifold(const Experiment &e) {
  const SlowFastModel &m = validated_model(e);
  const json b = e.block("manifold");
  const double eps = b.value("epsilon", m.epsilon);
  const Vector u0 = vector_or(b, "u0", m.x0);
  const double step = b.value("step", 0.01);
  const double T_neg = b.value("T_neg", 30.0 / decay_rates(m).gamma_B);
  LyapunovPerronOptions lo;
  lo.grid_step = step;
  lo.T_neg = T_neg;
  lo.tol = b.value("tol", lo.tol);
  lo.max_iter = b.value("max_iter", lo.max_iter);
  if (b.contains("gamma")) {
    lo.gamma = b.at("gamma").get<double>();
  }
  const json tb = b.contains("tracking") ? b.at("tracking") : json();
  const double T_fwd = tb.is_object() ? tb.value("T", 6.0) : 0.0;
  Rng rng(e.seed, 0, StreamRole::Auxiliary);
  const ManifoldNoise w = sample_manifold_noise(m, T_neg, T_fwd, step, rng);
  const ManifoldSolution s = lyapunov_perron_solve(m, eps, u0, w, lo);

  json out = run_header(e, "manifold");
  out["solution"] = to_json(s);
  std::vector<CriterionResult> checks;
  checks.push_back({"manifold.contraction", s.rho < 1.0, s.rho, 1.0, "contraction factor rho"});
  const double ratio = s.max_residual_ratio();
  checks.push_back({"manifold.residual_ratio", ratio <= s.rho + 1e-6, ratio, s.rho,
                    "largest ratio of consecutive sweep residuals"});
  if (tb.is_object()) {
    const Vector offset = vector_or(tb, "offset", Vector::Ones(m.dim()));
    const Vector v_off = s.h_value + offset;
    const TrackingPartner p = find_tracking_partner(m, eps, u0, v_off, w, T_fwd, lo);
    TrackingOptions to;
    to.gamma = lo.gamma;
    const TrackingResult tr = tracking_check(m, eps, {p.u0, p.h}, {u0, v_off}, T_fwd, w, to);
    out["tracking"] = to_json(tr);
    checks.push_back({"manifold.tracking_rate", tr.fitted_rate >= tr.gamma, tr.fitted_rate, tr.gamma,
                      "fitted decay rate of the tracking distance against gamma"});
  }
  const int rc = report(checks, out);
  const ArtifactWriter aw(e, "manifold");
  std::ostringstream csv;
  write_manifold_csv(csv, s);
  aw.csv(csv.str());
  aw.json_report(out);
  return rc;
}

int cmd_deviate(const Experiment &e) {
  const SlowFastModel &m = validated_model(e);
  const json b = e.block("deviate");
  AveragingOptions ao;
  ao.seed = e.seed;
  ao.workers = e.workers;
  const AveragedModel am = build_averaged_model(m, ao);

  DeviationOptions o;
  o.seed = e.seed;
  o.replicas = b.value("replicas", o.replicas);
  o.horizon = b.value("horizon", o.horizon);
  o.lag_max = b.value("lag_max", o.lag_max);
  o.lag_step = b.value("lag_step", o.lag_step);
  o.dt = b.value("kernel_dt", o.dt);
  o.literal_drift = b.value("literal_drift", false);
  o.table_nodes = b.value("table_nodes", o.table_nodes);
  if (b.contains("htilde")) {
    o.mode = DeviationOptions::HtildeMode::Override;
    o.override_ = io::matrix_from_json(b.at("htilde"), m.dim(), "deviate.htilde");
  } else if (b.value("mode", std::string("constant")) == "tabulated") {
    o.mode = DeviationOptions::HtildeMode::Tabulated;
  }
  if (b.contains("x_ref")) {
    o.x_ref = io::vector_from_json(b.at("x_ref"), m.dim(), "deviate.x_ref");
  }
  const DeviationModel dm = build_deviation_model(m, am, o);

  const double T = b.value("T", 1.0);
  const double dt = b.value("dt", 0.001);
  Rng xr(e.seed, 0, StreamRole::SlowNoise);
  const Trajectory x = simulate_averaged(am, T, dt, xr);
  Rng tr(e.seed, 0, StreamRole::DeviationNoise);
  const Trajectory theta = simulate_deviation(dm, x, T, dt, tr);

  json out = run_header(e, "deviate");
  out["deviation_model"] = to_json(dm);
  out["T"] = T;
  out["dt"] = dt;
  const Eigen::SelfAdjointEigenSolver<Matrix> es(dm.htilde.H(m.x0));
  const double min_eig = es.eigenvalues().minCoeff();
  const int rc = report({{"deviate.htilde_psd", min_eig >= 0.0, min_eig, 0.0,
                          "smallest eigenvalue of Htilde at x0"},
                         {"deviate.finite_path", !theta.diverged, static_cast<double>(theta.points()),
                          0.0, "computed grid points"}},
                        out);
  const ArtifactWriter w(e, "deviate");
  w.csv(joint_csv(x.grid, {{"x", &x.states}, {"theta", &theta.states}}));
  w.json_report(out);
  return rc;
}

int cmd_verify(const Experiment &e) {
  const json b = e.block("verify");
  VerifyOptions o;
  o.seed = e.seed;
  o.workers = e.workers;
  if (b.contains("groups")) {
    o.groups = b.at("groups").get<std::vector<std::string>>();
  }
  const auto results = run_acceptance(o);
  json out = run_header(e, "verify");
  const int rc = report(results, out);
  std::ostringstream csv;
  csv << "id,pass,value,tolerance\n";
  for (const auto &r : results) {
    csv << r.id << ',' << (r.pass ? 1 : 0) << ',';
    detail::write_num(csv, r.value);
    csv << ',';
    detail::write_num(csv, r.tolerance);
    csv << '\n';
  }
  const ArtifactWriter w(e, "verify");
  w.csv(csv.str());
  w.json_report(out);
  return rc;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Simulation and verification toolkit for slow-fast SDEs with Levy noise"};
  app.require_subcommand(1);
  CommonFlags flags;
  using Handler = int (*)(const Experiment &);
  const std::vector<std::tuple<std::string, std::string, Handler>> commands{
      {"validate", "check the model against the standing assumptions", cmd_validate},
      {"simulate", "simulate one slow-fast path", cmd_simulate},
      {"average", "averaged drift, strong error and mixing experiments", cmd_average},
      {"manifold", "Lyapunov-Perron manifold value and exponential tracking", cmd_manifold},
      {"deviate", "diffusion matrix and one normal-deviation path", cmd_deviate},
      {"verify", "acceptance checks against analytic oracles", cmd_verify}};
  std::vector<std::pair<CLI::App *, Handler>> subs;
  for (const auto &[name, help, handler] : commands) {
    CLI::App *sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "experiment or model JSON file")->required();
    sub->add_option("--seed", flags.seed, "master seed (overrides SEED and the config)");
    sub->add_option("--workers", flags.workers, "worker threads for ensembles")
        ->check(CLI::PositiveNumber);
    sub->add_option("--out", flags.out, "directory for CSV/JSON artifacts");
    subs.emplace_back(sub, handler);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &err) {
    return app.exit(err) == 0 ? kOk : kUsage;
  }

  try {
    const Experiment e = load_experiment(flags);
    for (const auto &[sub, handler] : subs) {
      if (sub->parsed()) {
        return handler(e);
      }
    }
  } catch (const AssumptionViolation &err) {
    std::cerr << "error: " << err.what() << '\n';
    return kInvalid;
  } catch (const std::exception &err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
