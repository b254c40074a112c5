#pragma once

// Recursive-descent parser for the drift mini-language:
//
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := number | ident | '-' factor | func '(' expr ')' | '(' expr ')'
//   ident  := 'x'digits | 'y'digits          (1-based component index)
//   func   := 'sin' | 'cos' | 'tanh' | 'exp'
//
// Expressions compile to a postfix program evaluated on a fixed-size stack.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "slowfast/types.hpp"

namespace slowfast {

enum class OpCode : unsigned char {
  Const,
  LoadX,
  LoadY,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Sin,
  Cos,
  Tanh,
  Exp,
};

struct Instruction {
  OpCode op;
  double value = 0.0; // Const
  int index = 0;      // LoadX / LoadY, zero-based
};

class Expression {
public:
  Expression() = default;

  /// Parses `source` for a system of dimension `dim`.
  static Expression parse(std::string_view source, int dim);

  [[nodiscard]] double evaluate(const double *x, const double *y) const {
    double stack[kMaxStack];
    int top = -1;
    for (const auto &ins : code_) {
      switch (ins.op) {
      case OpCode::Const: stack[++top] = ins.value; break;
      case OpCode::LoadX: stack[++top] = x[ins.index]; break;
      case OpCode::LoadY: stack[++top] = y[ins.index]; break;
      case OpCode::Add: --top; stack[top] += stack[top + 1]; break;
      case OpCode::Sub: --top; stack[top] -= stack[top + 1]; break;
      case OpCode::Mul: --top; stack[top] *= stack[top + 1]; break;
      case OpCode::Div: --top; stack[top] /= stack[top + 1]; break;
      case OpCode::Neg: stack[top] = -stack[top]; break;
      case OpCode::Sin: stack[top] = std::sin(stack[top]); break;
      case OpCode::Cos: stack[top] = std::cos(stack[top]); break;
      case OpCode::Tanh: stack[top] = std::tanh(stack[top]); break;
      case OpCode::Exp: stack[top] = std::exp(stack[top]); break;
      }
    }
    return stack[0];
  }

  /// Polynomial degree in the y variables; infinity when y enters
  /// non-polynomially (inside a function or a denominator).
  [[nodiscard]] double y_degree() const;

  [[nodiscard]] const std::vector<Instruction> &code() const noexcept { return code_; }
  [[nodiscard]] const std::string &source() const noexcept { return source_; }

  static constexpr int kMaxStack = 64;

private:
  std::vector<Instruction> code_;
  std::string source_;
};

namespace detail {

class ExpressionParser {
public:
  ExpressionParser(std::string_view src, int dim) : src_(src), dim_(dim) {}

  std::vector<Instruction> run() {
    skip_ws();
    if (pos_ >= src_.size()) {
      throw ParseError("empty expression", pos_);
    }
    expr();
    skip_ws();
    if (pos_ != src_.size()) {
      throw ParseError(std::string("unexpected character '") + src_[pos_] + "'", pos_);
    }
    return std::move(code_);
  }

private:
  void emit(OpCode op, double value = 0.0, int index = 0) {
    code_.push_back({op, value, index});
    if (op == OpCode::Const || op == OpCode::LoadX || op == OpCode::LoadY) {
      ++depth_;
      max_depth_ = std::max(max_depth_, depth_);
      if (max_depth_ > Expression::kMaxStack) {
        throw ParseError("expression nested too deeply", pos_);
      }
    } else if (op == OpCode::Add || op == OpCode::Sub || op == OpCode::Mul ||
               op == OpCode::Div) {
      --depth_;
    }
  }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) {
      ++pos_;
    }
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) {
      throw ParseError(std::string("expected '") + c + "'", pos_);
    }
  }

  void expr() {
    term();
    for (;;) {
      if (accept('+')) {
        term();
        emit(OpCode::Add);
      } else if (accept('-')) {
        term();
        emit(OpCode::Sub);
      } else {
        return;
      }
    }
  }

  void term() {
    factor();
    for (;;) {
      if (accept('*')) {
        factor();
        emit(OpCode::Mul);
      } else if (accept('/')) {
        factor();
        emit(OpCode::Div);
      } else {
        return;
      }
    }
  }

  void factor() {
    skip_ws();
    if (pos_ >= src_.size()) {
      throw ParseError("unexpected end of expression", pos_);
    }
    const char c = src_[pos_];
    if (c == '-') {
      ++pos_;
      factor();
      emit(OpCode::Neg);
      return;
    }
    if (c == '(') {
      ++pos_;
      expr();
      expect(')');
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      number();
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      identifier();
      return;
    }
    throw ParseError(std::string("unexpected character '") + c + "'", pos_);
  }

  void number() {
    const std::size_t start = pos_;
    auto digits = [&] {
      std::size_t n = 0;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        ++pos_;
        ++n;
      }
      return n;
    };
    std::size_t n = digits();
    if (pos_ < src_.size() && src_[pos_] == '.') {
      ++pos_;
      n += digits();
    }
    if (n == 0) {
      throw ParseError("malformed number", start);
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t save = pos_;
      ++pos_;
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) {
        ++pos_;
      }
      if (digits() == 0) {
        throw ParseError("malformed exponent", save);
      }
    }
    const std::string text(src_.substr(start, pos_ - start));
    emit(OpCode::Const, std::strtod(text.c_str(), nullptr));
  }

  void identifier() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() && std::isalnum(static_cast<unsigned char>(src_[pos_]))) {
      ++pos_;
    }
    const std::string name(src_.substr(start, pos_ - start));

    if ((name[0] == 'x' || name[0] == 'y') && name.size() > 1 &&
        std::all_of(name.begin() + 1, name.end(),
                    [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
      const long idx = std::strtol(name.c_str() + 1, nullptr, 10);
      if (idx < 1 || idx > dim_) {
        throw ParseError("unknown identifier '" + name + "' (dimension " +
                             std::to_string(dim_) + ")",
                         start);
      }
      emit(name[0] == 'x' ? OpCode::LoadX : OpCode::LoadY, 0.0, static_cast<int>(idx - 1));
      return;
    }

    OpCode fn;
    if (name == "sin") {
      fn = OpCode::Sin;
    } else if (name == "cos") {
      fn = OpCode::Cos;
    } else if (name == "tanh") {
      fn = OpCode::Tanh;
    } else if (name == "exp") {
      fn = OpCode::Exp;
    } else {
      throw ParseError("unknown identifier '" + name + "'", start);
    }
    expect('(');
    expr();
    expect(')');
    emit(fn);
  }

  std::string_view src_;
  int dim_;
  std::size_t pos_ = 0;
  int depth_ = 0;
  int max_depth_ = 0;
  std::vector<Instruction> code_;
};

} // namespace detail

inline Expression Expression::parse(std::string_view source, int dim) {
  require(dim >= 1, "expression dimension must be positive");
  Expression e;
  e.code_ = detail::ExpressionParser(source, dim).run();
  e.source_ = std::string(source);
  return e;
}

inline double Expression::y_degree() const {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> deg;
  for (const auto &ins : code_) {
    switch (ins.op) {
    case OpCode::Const:
    case OpCode::LoadX: deg.push_back(0.0); break;
    case OpCode::LoadY: deg.push_back(1.0); break;
    case OpCode::Add:
    case OpCode::Sub: {
      const double b = deg.back();
      deg.pop_back();
      deg.back() = std::max(deg.back(), b);
      break;
    }
    case OpCode::Mul: {
      const double b = deg.back();
      deg.pop_back();
      deg.back() += b;
      break;
    }
    case OpCode::Div: {
      const double b = deg.back();
      deg.pop_back();
      if (b > 0.0) {
        deg.back() = inf;
      }
      break;
    }
    case OpCode::Neg: break;
    case OpCode::Sin:
    case OpCode::Cos:
    case OpCode::Tanh:
    case OpCode::Exp:
      if (deg.back() > 0.0) {
        deg.back() = inf;
      }
      break;
    }
  }
  return deg.empty() ? 0.0 : deg.back();
}

} // namespace slowfast
