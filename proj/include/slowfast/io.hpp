#pragma once

// JSON model files and report serialization. The model schema is
// documented in docs/model_schema.md.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "slowfast/averaging.hpp"
#include "slowfast/deviation.hpp"
#include "slowfast/manifold.hpp"
#include "slowfast/model.hpp"

namespace slowfast {

using json = nlohmann::json;

/// Unreadable file or malformed document.
class IoError : public Error {
public:
  using Error::Error;
};

namespace io {

[[nodiscard]] inline json to_json(const Vector &v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) {
    a.push_back(v[i]);
  }
  return a;
}

[[nodiscard]] inline json to_json(const Matrix &M) {
  json a = json::array();
  for (Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < M.cols(); ++j) {
      row.push_back(M(i, j));
    }
    a.push_back(row);
  }
  return a;
}

[[nodiscard]] inline Vector vector_from_json(const json &j, int n, const std::string &what) {
  if (j.is_number() && n == 1) {
    return Vector::Constant(1, j.get<double>());
  }
  if (!j.is_array() || static_cast<int>(j.size()) != n) {
    throw IoError(what + ": expected an array of length " + std::to_string(n));
  }
  Vector v(n);
  for (int i = 0; i < n; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) {
      throw IoError(what + ": entries must be numbers");
    }
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

/// Accepts a nested n x n array; a bare number is accepted for n = 1.
[[nodiscard]] inline Matrix matrix_from_json(const json &j, int n, const std::string &what) {
  if (j.is_number() && n == 1) {
    return Matrix::Constant(1, 1, j.get<double>());
  }
  if (!j.is_array() || static_cast<int>(j.size()) != n) {
    throw IoError(what + ": expected " + std::to_string(n) + " rows");
  }
  Matrix M(n, n);
  for (int i = 0; i < n; ++i) {
    M.row(i) = vector_from_json(j[static_cast<std::size_t>(i)], n, what).transpose();
  }
  return M;
}

[[nodiscard]] inline int dimension_of(const json &j) {
  if (j.contains("dimension")) {
    return j.at("dimension").get<int>();
  }
  const json &A = j.at("A");
  return A.is_number() ? 1 : static_cast<int>(A.size());
}

[[nodiscard]] inline json drift_to_json(const DriftFn &d) {
  json out = std::visit(
      [](const auto &fam) -> json {
        using T = std::decay_t<decltype(fam)>;
        if constexpr (std::is_same_v<T, ConstantFamily>) {
          return {{"kind", "constant"}, {"c", to_json(fam.c)}};
        } else if constexpr (std::is_same_v<T, LinearFamily>) {
          return {{"kind", "linear"}, {"Mx", to_json(fam.Mx)}, {"My", to_json(fam.My)}, {"c", to_json(fam.c)}};
        } else if constexpr (std::is_same_v<T, TanhFamily>) {
          return {{"kind", "tanh"},
                  {"scale", to_json(fam.scale)},
                  {"Mx", to_json(fam.Mx)},
                  {"My", to_json(fam.My)},
                  {"c", to_json(fam.c)}};
        } else {
          json comps = json::array();
          for (const auto &e : fam.components) {
            comps.push_back(e.source());
          }
          return {{"kind", "expression"}, {"components", comps}};
        }
      },
      d.body());
  if (d.constants.lipschitz) {
    out["lipschitz"] = *d.constants.lipschitz;
  }
  if (d.constants.growth) {
    out["growth"] = *d.constants.growth;
  }
  return out;
}

[[nodiscard]] inline DriftFn drift_from_json(const json &j, int n, const std::string &what) {
  DriftFn d;
  if (j.is_string() || (j.is_array() && !j.empty() && j.front().is_string())) {
    const auto comps = j.is_string() ? std::vector<std::string>{j.get<std::string>()}
                                     : j.get<std::vector<std::string>>();
    d = DriftFn::parse(comps, n);
  } else {
    const std::string kind = j.at("kind").get<std::string>();
    auto mat = [&](const char *key) {
      return j.contains(key) ? matrix_from_json(j.at(key), n, what + "." + key) : Matrix(Matrix::Zero(n, n));
    };
    auto vec = [&](const char *key) {
      return j.contains(key) ? vector_from_json(j.at(key), n, what + "." + key) : Vector(Vector::Zero(n));
    };
    if (kind == "zero") {
      d = DriftFn::zero(n);
    } else if (kind == "constant") {
      d = DriftFn::constant(vec("c"));
    } else if (kind == "linear") {
      d = DriftFn::linear(mat("Mx"), mat("My"), vec("c"));
    } else if (kind == "tanh") {
      d = DriftFn::tanh(vec("scale"), mat("Mx"), mat("My"), vec("c"));
    } else if (kind == "expression") {
      d = DriftFn::parse(j.at("components").get<std::vector<std::string>>(), n);
    } else {
      throw IoError(what + ": unknown drift kind '" + kind + "'");
    }
    if (j.contains("lipschitz")) {
      d.constants.lipschitz = j.at("lipschitz").get<double>();
    }
    if (j.contains("growth")) {
      d.constants.growth = j.at("growth").get<double>();
    }
  }
  return d;
}

[[nodiscard]] inline json noise_to_json(const NoiseSpec &s) {
  json out{{"sigma", to_json(s.sigma)}};
  if (s.jumps.active()) {
    json jj{{"intensity", s.jumps.intensity}, {"compensated", s.jumps.compensated}};
    std::visit(
        [&](const auto &d) {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, UniformJumps>) {
            jj["distribution"] = "uniform";
            jj["lo"] = d.lo;
            jj["hi"] = d.hi;
          } else {
            jj["distribution"] = "discrete";
            json atoms = json::array();
            for (const auto &a : d.atoms) {
              atoms.push_back({{"z", to_json(a.z)}, {"probability", a.probability}});
            }
            jj["atoms"] = atoms;
          }
        },
        s.jumps.size);
    out["jumps"] = jj;
  }
  return out;
}

[[nodiscard]] inline NoiseSpec noise_from_json(const json &j, int n, const std::string &what) {
  NoiseSpec s;
  s.sigma = j.contains("sigma") ? matrix_from_json(j.at("sigma"), n, what + ".sigma")
                                : Matrix(Matrix::Zero(n, n));
  if (j.contains("jumps")) {
    const json &jj = j.at("jumps");
    s.jumps.intensity = jj.value("intensity", 0.0);
    s.jumps.compensated = jj.value("compensated", true);
    const std::string dist = jj.value("distribution", std::string("uniform"));
    if (dist == "uniform") {
      s.jumps.size = UniformJumps{jj.value("lo", 0.0), jj.value("hi", 0.0)};
    } else if (dist == "discrete") {
      DiscreteJumps d;
      for (const auto &a : jj.at("atoms")) {
        d.atoms.push_back({vector_from_json(a.at("z"), n, what + ".jumps.atoms.z"),
                           a.at("probability").get<double>()});
      }
      s.jumps.size = d;
    } else {
      throw IoError(what + ".jumps: unknown distribution '" + dist + "'");
    }
  }
  return s;
}

} // namespace io

[[nodiscard]] inline json model_to_json(const SlowFastModel &m) {
  json j{{"name", m.name},
         {"dimension", m.dim()},
         {"epsilon", m.epsilon},
         {"A", io::to_json(m.A)},
         {"B", io::to_json(m.B)},
         {"f", io::drift_to_json(m.f)},
         {"g", io::drift_to_json(m.g)},
         {"slow_noise", io::noise_to_json(m.slow)},
         {"fast_noise", io::noise_to_json(m.fast)},
         {"x0", io::to_json(m.x0)},
         {"y0", io::to_json(m.y0)}};
  if (m.gamma_A_prime) {
    j["gamma_A_prime"] = *m.gamma_A_prime;
  }
  return j;
}

/// Builds a model from its JSON document. Shape errors and unknown kinds
/// raise IoError; drift expressions that fail to parse raise ParseError.
[[nodiscard]] inline SlowFastModel model_from_json(const json &j) {
  try {
    if (!j.is_object()) {
      throw IoError("model: document must be an object");
    }
    const int n = io::dimension_of(j);
    if (n < 1) {
      throw IoError("model: dimension must be positive");
    }
    SlowFastModel m;
    m.name = j.value("name", std::string("model"));
    m.epsilon = j.value("epsilon", 1.0);
    m.A = io::matrix_from_json(j.at("A"), n, "A");
    m.B = io::matrix_from_json(j.at("B"), n, "B");
    m.f = io::drift_from_json(j.at("f"), n, "f");
    m.g = io::drift_from_json(j.at("g"), n, "g");
    m.slow = j.contains("slow_noise") ? io::noise_from_json(j.at("slow_noise"), n, "slow_noise")
                                      : NoiseSpec{Matrix::Zero(n, n), {}};
    m.fast = j.contains("fast_noise") ? io::noise_from_json(j.at("fast_noise"), n, "fast_noise")
                                      : NoiseSpec{Matrix::Zero(n, n), {}};
    m.x0 = j.contains("x0") ? io::vector_from_json(j.at("x0"), n, "x0") : Vector(Vector::Zero(n));
    m.y0 = j.contains("y0") ? io::vector_from_json(j.at("y0"), n, "y0") : Vector(Vector::Zero(n));
    if (j.contains("gamma_A_prime")) {
      m.gamma_A_prime = j.at("gamma_A_prime").get<double>();
    }
    m.check_well_formed();
    return m;
  } catch (const json::exception &e) {
    throw IoError(std::string("model: ") + e.what());
  } catch (const InvalidArgument &e) {
    throw IoError(std::string("model: ") + e.what());
  }
}

[[nodiscard]] inline json read_json_file(const std::string &path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open '" + path + "'");
  }
  try {
    return json::parse(in);
  } catch (const json::parse_error &e) {
    throw IoError("'" + path + "': " + e.what());
  }
}

[[nodiscard]] inline SlowFastModel load_model(const std::string &path) {
  return model_from_json(read_json_file(path));
}

inline void save_model(const SlowFastModel &m, const std::string &path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write '" + path + "'");
  }
  out << model_to_json(m).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

[[nodiscard]] inline json to_json(const ValidationReport &r) {
  json checks = json::array();
  for (const auto &c : r.checks) {
    checks.push_back({{"id", c.id}, {"status", to_string(c.status)}, {"detail", c.detail}});
  }
  return {{"passed", r.passed()},
          {"gamma_A", r.rates.gamma_A},
          {"gamma_A_prime", r.rates.gamma_A_prime},
          {"gamma_B", r.rates.gamma_B},
          {"lipschitz_f", r.lipschitz_f},
          {"lipschitz_g", r.lipschitz_g},
          {"lipschitz_f_estimate", r.lipschitz_f_estimate},
          {"lipschitz_g_estimate", r.lipschitz_g_estimate},
          {"checks", checks}};
}

[[nodiscard]] inline json to_json(const MixingReport &r) {
  json curve = json::array();
  for (const auto &p : r.curve) {
    curve.push_back({{"t", p.t}, {"deviation", p.deviation}, {"stderr", p.standard_error}, {"start", p.start_index}});
  }
  return {{"lipschitz_g", r.lipschitz_g},
          {"eta_bound", r.eta_bound},
          {"eta_empirical", r.eta_empirical},
          {"eta_empirical_se", r.eta_empirical_se},
          {"fit_points", r.fit_points},
          {"fbar", io::to_json(r.fbar)},
          {"curve", curve}};
}

[[nodiscard]] inline json to_json(const RateFit &f) {
  return {{"slope", f.slope},
          {"intercept", f.intercept},
          {"slope_se", f.slope_se},
          {"ci_low", f.ci_low},
          {"ci_high", f.ci_high},
          {"lower_bound_95", f.lower_bound_95},
          {"points", f.points}};
}

[[nodiscard]] inline json to_json(const RateReport &r) {
  json pts = json::array();
  for (const auto &p : r.points) {
    pts.push_back({{"epsilon", p.epsilon},
                   {"delta", p.delta},
                   {"bound", p.bound},
                   {"error", p.error},
                   {"stderr", p.standard_error},
                   {"paths", p.paths},
                   {"diverged", p.diverged},
                   {"flagged", p.flagged}});
  }
  return {{"delta_exponent", r.delta_rule.exponent},
          {"T", r.T},
          {"points", pts},
          {"fit", to_json(r.fit)},
          {"monotone", r.monotone()}};
}

[[nodiscard]] inline json to_json(const ManifoldSolution &s) {
  return {{"epsilon", s.epsilon},
          {"u0", io::to_json(s.u0)},
          {"gamma", s.gamma},
          {"h", io::to_json(s.h_value)},
          {"rho", s.rho},
          {"rho_hat", s.rho_hat},
          {"L_h", s.L_h},
          {"iterations", s.iterations},
          {"residuals", s.residuals}};
}

[[nodiscard]] inline json to_json(const TrackingResult &r) {
  return {{"fitted_rate", r.fitted_rate},
          {"gamma", r.gamma},
          {"rho", r.rho},
          {"rho_hat", r.rho_hat},
          {"under_envelope", r.under_envelope},
          {"identical", r.identical}};
}

[[nodiscard]] inline json to_json(const DeviationModel &dm) {
  json h = json::array();
  for (const auto &H : dm.htilde.node_values()) {
    h.push_back(io::to_json(H));
  }
  return {{"A", io::to_json(dm.A)},
          {"htilde_constant", dm.htilde.is_constant()},
          {"htilde", h},
          {"literal_drift", dm.literal_drift}};
}

/// s,H_ij...,stderr_ij...
inline void write_kernel_csv(std::ostream &os, const KernelEstimate &k) {
  const Index n = k.H.empty() ? 0 : k.H.front().rows();
  os << 's';
  for (const char *p : {"H_", "stderr_"}) {
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        os << ',' << p << i + 1 << j + 1;
      }
    }
  }
  os << '\n';
  for (std::size_t l = 0; l < k.lags.size(); ++l) {
    detail::write_num(os, k.lags[l]);
    for (const Matrix *M : {&k.H[l], &k.stderr_[l]}) {
      for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
          os << ',';
          detail::write_num(os, (*M)(i, j));
        }
      }
    }
    os << '\n';
  }
}

/// epsilon,error,stderr
inline void write_rate_csv(std::ostream &os, const RateReport &r) {
  os << "epsilon,error,stderr\n";
  for (const auto &p : r.points) {
    detail::write_num(os, p.epsilon);
    os << ',';
    detail::write_num(os, p.error);
    os << ',';
    detail::write_num(os, p.standard_error);
    os << '\n';
  }
}

/// t,deviation
inline void write_mixing_csv(std::ostream &os, const MixingReport &r) {
  os << "t,deviation,stderr,start\n";
  for (const auto &p : r.curve) {
    detail::write_num(os, p.t);
    os << ',';
    detail::write_num(os, p.deviation);
    os << ',';
    detail::write_num(os, p.standard_error);
    os << ',' << p.start_index << '\n';
  }
}

/// t,u_i...,v_i...
inline void write_manifold_csv(std::ostream &os, const ManifoldSolution &s) {
  const Index n = s.u.rows();
  os << 't';
  for (Index i = 0; i < n; ++i) {
    os << ",u" << i + 1;
  }
  for (Index i = 0; i < n; ++i) {
    os << ",v" << i + 1;
  }
  os << '\n';
  for (std::size_t k = 0; k < s.grid.size(); ++k) {
    detail::write_num(os, s.grid[k]);
    for (const Matrix *M : {&s.u, &s.v}) {
      for (Index i = 0; i < n; ++i) {
        os << ',';
        detail::write_num(os, (*M)(i, static_cast<Index>(k)));
      }
    }
    os << '\n';
  }
}

} // namespace slowfast
