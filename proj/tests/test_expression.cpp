#include <cmath>

#include <gtest/gtest.h>

#include "slowfast/expression.hpp"

using slowfast::Expression;
using slowfast::ParseError;

namespace {

double eval(const std::string &src, std::vector<double> x, std::vector<double> y) {
  const auto e = Expression::parse(src, static_cast<int>(x.size()));
  return e.evaluate(x.data(), y.data());
}

} // namespace

TEST(Expression, IdentityProjection) {
  EXPECT_DOUBLE_EQ(eval("y1", {0.0}, {1.75}), 1.75);
}

TEST(Expression, Arithmetic) {
  EXPECT_DOUBLE_EQ(eval("x1 + 2*y1", {1.0}, {3.0}), 7.0);
}

TEST(Expression, TanhAtZero) {
  EXPECT_DOUBLE_EQ(eval("tanh(y1)", {0.0}, {0.0}), 0.0);
}

TEST(Expression, PrecedenceAndAssociativity) {
  EXPECT_DOUBLE_EQ(eval("2 + 3 * 4", {0.0}, {0.0}), 14.0);
  EXPECT_DOUBLE_EQ(eval("8 - 3 - 2", {0.0}, {0.0}), 3.0);
  EXPECT_DOUBLE_EQ(eval("8 / 4 / 2", {0.0}, {0.0}), 1.0);
  EXPECT_DOUBLE_EQ(eval("-(1 + 2) * 3", {0.0}, {0.0}), -9.0);
  EXPECT_DOUBLE_EQ(eval("--2", {0.0}, {0.0}), 2.0);
}

TEST(Expression, NumbersWithExponents) {
  EXPECT_DOUBLE_EQ(eval("1.5e2 + .5", {0.0}, {0.0}), 150.5);
  EXPECT_DOUBLE_EQ(eval("2E-1", {0.0}, {0.0}), 0.2);
}

TEST(Expression, FunctionsMatchLibm) {
  const double x = 0.3, y = -1.2;
  EXPECT_DOUBLE_EQ(eval("sin(x1) * cos(y1) + exp(x1 - y1)", {x}, {y}),
                   std::sin(x) * std::cos(y) + std::exp(x - y));
}

TEST(Expression, MultiComponentIndices) {
  EXPECT_DOUBLE_EQ(eval("x2 * y3 - x1", {1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}), 11.0);
}

TEST(Expression, RejectsOutOfRangeIdentifier) {
  EXPECT_THROW(Expression::parse("y2", 1), ParseError);
  EXPECT_THROW(Expression::parse("x0", 1), ParseError);
  EXPECT_THROW(Expression::parse("z1", 1), ParseError);
}

TEST(Expression, ReportsErrorPosition) {
  try {
    (void)Expression::parse("1 + * 2", 1);
    FAIL() << "expected a parse error";
  } catch (const ParseError &e) {
    EXPECT_EQ(e.position(), 4u);
  }
}

TEST(Expression, RejectsMalformedInput) {
  for (const char *bad : {"", "(", "1 +", "sin 1", "1 2", "log(1)", "1..2", ")"}) {
    EXPECT_THROW(Expression::parse(bad, 1), ParseError) << bad;
  }
}

TEST(Expression, DegreeInY) {
  EXPECT_EQ(Expression::parse("x1 * 3", 1).y_degree(), 0.0);
  EXPECT_EQ(Expression::parse("2 * y1 + x1", 1).y_degree(), 1.0);
  EXPECT_EQ(Expression::parse("y1 * y1", 1).y_degree(), 2.0);
  EXPECT_TRUE(std::isinf(Expression::parse("tanh(y1)", 1).y_degree()));
  EXPECT_TRUE(std::isinf(Expression::parse("1 / y1", 1).y_degree()));
  EXPECT_EQ(Expression::parse("sin(x1) * y1", 1).y_degree(), 1.0);
}

TEST(Expression, KeepsSource) {
  EXPECT_EQ(Expression::parse("x1+y1", 1).source(), "x1+y1");
}
