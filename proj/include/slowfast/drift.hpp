#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "slowfast/expression.hpp"
#include "slowfast/types.hpp"

namespace slowfast {

/// out = Mx x + My y + c
struct LinearFamily {
  Matrix Mx;
  Matrix My;
  Vector c;
};

struct ConstantFamily {
  Vector c;
};

/// out_i = scale_i * tanh((Mx x + My y + c)_i)
struct TanhFamily {
  Vector scale;
  Matrix Mx;
  Matrix My;
  Vector c;
};

struct ExpressionFamily {
  std::vector<Expression> components;
};

/// User-declared regularity constants of a drift (Lipschitz and growth).
struct DriftConstants {
  std::optional<double> lipschitz;
  std::optional<double> growth;
};

/// A nonlinearity (x, y) -> R^n of the slow-fast system.
class DriftFn {
public:
  using Body = std::variant<LinearFamily, ConstantFamily, TanhFamily, ExpressionFamily>;

  DriftFn() : DriftFn(zero(1)) {}

  static DriftFn zero(int dim) { return constant(Vector::Zero(dim)); }

  static DriftFn constant(Vector c) {
    const int n = static_cast<int>(c.size());
    return DriftFn(ConstantFamily{std::move(c)}, n);
  }

  static DriftFn linear(Matrix Mx, Matrix My, Vector c) {
    const int n = static_cast<int>(c.size());
    require(Mx.rows() == n && Mx.cols() == n && My.rows() == n && My.cols() == n,
            "linear drift: coefficient shapes must be n x n");
    return DriftFn(LinearFamily{std::move(Mx), std::move(My), std::move(c)}, n);
  }

  static DriftFn tanh(Vector scale, Matrix Mx, Matrix My, Vector c) {
    const int n = static_cast<int>(scale.size());
    require(Mx.rows() == n && Mx.cols() == n && My.rows() == n && My.cols() == n &&
                c.size() == n,
            "tanh drift: coefficient shapes must be n x n");
    return DriftFn(TanhFamily{std::move(scale), std::move(Mx), std::move(My), std::move(c)}, n);
  }

  /// Parses one expression per output component.
  static DriftFn parse(const std::vector<std::string> &exprs, int dim) {
    if (static_cast<int>(exprs.size()) != dim) {
      throw InvalidArgument("arity mismatch: " + std::to_string(exprs.size()) +
                            " expressions for dimension " + std::to_string(dim));
    }
    ExpressionFamily fam;
    fam.components.reserve(exprs.size());
    for (const auto &e : exprs) {
      fam.components.push_back(Expression::parse(e, dim));
    }
    return DriftFn(std::move(fam), dim);
  }

  [[nodiscard]] int dim() const noexcept { return dim_; }
  [[nodiscard]] const Body &body() const noexcept { return body_; }

  DriftConstants constants;

  /// Evaluates into a preallocated output of length dim().
  void eval(const Vector &x, const Vector &y, Vector &out) const {
    std::visit([&](const auto &fam) { eval_impl(fam, x, y, out); }, body_);
  }

  [[nodiscard]] Vector operator()(const Vector &x, const Vector &y) const {
    Vector out(dim_);
    eval(x, y, out);
    return out;
  }

  /// Degree of the drift as a polynomial in y (0: y-independent, 1: affine,
  /// infinity: anything else).
  [[nodiscard]] double y_degree() const {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return std::visit(
        [&](const auto &fam) -> double {
          using T = std::decay_t<decltype(fam)>;
          if constexpr (std::is_same_v<T, ConstantFamily>) {
            return 0.0;
          } else if constexpr (std::is_same_v<T, LinearFamily>) {
            return fam.My.isZero(0.0) ? 0.0 : 1.0;
          } else if constexpr (std::is_same_v<T, TanhFamily>) {
            return (fam.My.isZero(0.0) || fam.scale.isZero(0.0)) ? 0.0 : inf;
          } else {
            double d = 0.0;
            for (const auto &e : fam.components) {
              d = std::max(d, e.y_degree());
            }
            return d;
          }
        },
        body_);
  }

  [[nodiscard]] bool is_y_independent() const { return y_degree() == 0.0; }

  [[nodiscard]] bool is_identically_zero() const {
    if (const auto *c = std::get_if<ConstantFamily>(&body_)) {
      return c->c.isZero(0.0);
    }
    if (const auto *l = std::get_if<LinearFamily>(&body_)) {
      return l->Mx.isZero(0.0) && l->My.isZero(0.0) && l->c.isZero(0.0);
    }
    if (const auto *t = std::get_if<TanhFamily>(&body_)) {
      return t->scale.isZero(0.0);
    }
    return false;
  }

  /// Exact Lipschitz constant (l1 input norm on (x, y), Euclidean output)
  /// for built-in families; empty for parsed expressions.
  [[nodiscard]] std::optional<double> analytic_lipschitz() const {
    auto max_col = [](const Matrix &M) {
      double best = 0.0;
      for (Index j = 0; j < M.cols(); ++j) {
        best = std::max(best, M.col(j).norm());
      }
      return best;
    };
    if (std::holds_alternative<ConstantFamily>(body_)) {
      return 0.0;
    }
    if (const auto *l = std::get_if<LinearFamily>(&body_)) {
      return std::max(max_col(l->Mx), max_col(l->My));
    }
    if (const auto *t = std::get_if<TanhFamily>(&body_)) {
      const Matrix S = t->scale.asDiagonal();
      return std::max(max_col(S * t->Mx), max_col(S * t->My));
    }
    return std::nullopt;
  }

private:
  DriftFn(Body body, int dim) : body_(std::move(body)), dim_(dim) {
    require(dim_ >= 1, "drift dimension must be positive");
  }

  static void eval_impl(const ConstantFamily &f, const Vector &, const Vector &, Vector &out) {
    out = f.c;
  }
  static void eval_impl(const LinearFamily &f, const Vector &x, const Vector &y, Vector &out) {
    out.noalias() = f.Mx * x;
    out.noalias() += f.My * y;
    out += f.c;
  }
  static void eval_impl(const TanhFamily &f, const Vector &x, const Vector &y, Vector &out) {
    out.noalias() = f.Mx * x;
    out.noalias() += f.My * y;
    out += f.c;
    for (Index i = 0; i < out.size(); ++i) {
      out[i] = f.scale[i] * std::tanh(out[i]);
    }
  }
  static void eval_impl(const ExpressionFamily &f, const Vector &x, const Vector &y, Vector &out) {
    for (std::size_t i = 0; i < f.components.size(); ++i) {
      out[static_cast<Index>(i)] = f.components[i].evaluate(x.data(), y.data());
    }
  }

  Body body_;
  int dim_;
};

} // namespace slowfast
