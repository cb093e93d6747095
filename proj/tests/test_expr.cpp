#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "region_gain/expr.hpp"

namespace ex = region_gain::expr;

namespace {

ex::NodePtr c(double v) { return ex::constant(v); }
ex::NodePtr var(const char* n) { return ex::variable(n); }
ex::NodePtr bin(ex::BinaryOp op, ex::NodePtr a, ex::NodePtr b) { return ex::binary(op, std::move(a), std::move(b)); }

}  // namespace

TEST(ExprParse, CubicMatchesHandBuiltTree) {
  using B = ex::BinaryOp;
  const auto cube = bin(B::div, bin(B::pow, var("x"), c(3)), c(3));
  const auto square = bin(B::div, bin(B::mul, c(3), bin(B::pow, var("x"), c(2))), c(2));
  const auto linear = bin(B::mul, c(2), var("x"));
  const auto expected = bin(B::add, bin(B::sub, cube, square), linear);
  EXPECT_TRUE(ex::equal(ex::parse("x^3/3 - 3*x^2/2 + 2*x").root(), *expected));
}

TEST(ExprParse, ConstantLiteral) {
  const auto e = ex::parse("0");
  EXPECT_EQ(e.root().kind, ex::Node::Kind::constant);
  EXPECT_EQ(e.root().value, 0.0);
}

TEST(ExprParse, SineOfScaledSquare) {
  const auto e = ex::parse("sin(x^2/10)");
  ASSERT_EQ(e.root().kind, ex::Node::Kind::unary);
  EXPECT_EQ(e.root().unary_op, ex::UnaryOp::sin);
  const auto arg = bin(ex::BinaryOp::div, bin(ex::BinaryOp::pow, var("x"), c(2)), c(10));
  EXPECT_TRUE(ex::equal(*e.root().children.at(0), *arg));
}

TEST(ExprParse, PowerBindsTighterThanNegation) {
  EXPECT_DOUBLE_EQ(ex::evaluate(ex::parse("-x^2"), {{"x", 3.0}}), -9.0);
  EXPECT_DOUBLE_EQ(ex::evaluate(ex::parse("2^3^2"), {}), 512.0);
  EXPECT_DOUBLE_EQ(ex::evaluate(ex::parse("(1 + 2) * 3 - 4 / 2"), {}), 7.0);
}

TEST(ExprParse, ErrorsCarryPosition) {
  try {
    ex::parse("1 + * 2");
    FAIL() << "expected a parse error";
  } catch (const ex::ParseError& e) {
    EXPECT_EQ(e.position(), 4u);
  }
  EXPECT_THROW(ex::parse("sin(x"), ex::ParseError);
  EXPECT_THROW(ex::parse("foo(x)"), ex::ParseError);
  EXPECT_THROW(ex::parse(""), ex::ParseError);
}

TEST(ExprEvaluate, CubicAtOneAndZero) {
  const auto e = ex::parse("x^3/3 - 3*x^2/2 + 2*x");
  // 1/3 - 3/2 + 2
  EXPECT_NEAR(ex::evaluate(e, {{"x", 1.0}}), 1.0 / 3.0 - 1.5 + 2.0, 1e-15);
  EXPECT_EQ(ex::evaluate(e, {{"x", 0.0}}), 0.0);
  EXPECT_EQ(ex::evaluate(ex::parse("sin(x^2/10)"), {{"x", 0.0}}), 0.0);
}

TEST(ExprEvaluate, DomainErrors) {
  EXPECT_THROW(ex::evaluate(ex::parse("1/x"), {{"x", 0.0}}), ex::EvalError);
  EXPECT_THROW(ex::evaluate(ex::parse("sqrt(x)"), {{"x", -1.0}}), ex::EvalError);
  EXPECT_THROW(ex::evaluate(ex::parse("y + 1"), {{"x", 0.0}}), ex::EvalError);
}

TEST(ExprEvaluate, MinMaxAbsExp) {
  EXPECT_DOUBLE_EQ(ex::evaluate(ex::parse("max(1, x, -3)"), {{"x", 4.0}}), 4.0);
  EXPECT_DOUBLE_EQ(ex::evaluate(ex::parse("min(1, x)"), {{"x", 4.0}}), 1.0);
  EXPECT_DOUBLE_EQ(ex::evaluate(ex::parse("abs(-2.5)"), {}), 2.5);
  EXPECT_NEAR(ex::evaluate(ex::parse("exp(1)"), {}), std::exp(1.0), 1e-15);
}

TEST(ExprCompiled, AgreesWithTreeWalk) {
  const auto e = ex::parse("-1.5*x1 + 2*(z1^3/3 - 3*z1^2/2 + 2*z1) + max(x1, z1)");
  const std::vector<std::string> slots = {"x1", "z1"};
  const ex::CompiledExpression compiled(e, slots);
  for (double x = -3; x <= 3; x += 0.7)
    for (double z = -2; z <= 2; z += 0.3) {
      const std::vector<double> v = {x, z};
      EXPECT_NEAR(compiled(v), ex::evaluate(e, {{"x1", x}, {"z1", z}}), 1e-12);
    }
}

TEST(ExprCompiled, RejectsUnknownVariable) {
  const std::vector<std::string> slots = {"s"};
  EXPECT_THROW(ex::CompiledExpression(ex::parse("s + t"), slots), ex::EvalError);
}

TEST(ExprRoundTrip, ToStringReparses) {
  for (const char* src : {"x^3/3 - 3*x^2/2 + 2*x", "-(a - b)^2", "max(a, min(b, 2), -c)", "sin(x^2/10)*exp(-y)"}) {
    const auto e = ex::parse(src);
    EXPECT_TRUE(ex::parse(e.to_string()) == e) << src;
  }
}

TEST(ExprVariables, SortedUnique) {
  const auto vars = ex::parse("z1 + x1*z1 - x2").variables();
  EXPECT_EQ(vars, (std::vector<std::string>{"x1", "x2", "z1"}));
}
