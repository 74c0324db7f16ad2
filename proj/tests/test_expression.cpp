#include <cmath>
#include <numbers>

#include "doctest.h"
#include "qsdlab/error.hpp"
#include "qsdlab/expression.hpp"

using namespace qsdlab;

TEST_SUITE("expression") {
  TEST_CASE("precedence and associativity") {
    CHECK(Expression::parse("1 + 2 * 3")(0.0) == 7.0);
    CHECK(Expression::parse("(1 + 2) * 3")(0.0) == 9.0);
    CHECK(Expression::parse("2 ^ 3 ^ 2")(0.0) == 512.0);
    CHECK(Expression::parse("-2 ^ 2")(0.0) == -4.0);
    CHECK(Expression::parse("2 ^ -1")(0.0) == 0.5);
    CHECK(Expression::parse("8 / 4 / 2")(0.0) == 1.0);
    CHECK(Expression::parse("1 - 2 - 3")(0.0) == -4.0);
  }

  TEST_CASE("functions and constants") {
    const double x = 0.7;
    CHECK(Expression::parse("exp(x)")(x) == doctest::Approx(std::exp(x)));
    CHECK(Expression::parse("ln(x) + log(x)")(x) == doctest::Approx(2.0 * std::log(x)));
    CHECK(Expression::parse("pow(x, 3)")(x) == doctest::Approx(x * x * x));
    CHECK(Expression::parse("sin(x)^2 + cos(x)^2")(x) == doctest::Approx(1.0));
    CHECK(Expression::parse("tan(x)")(x) == doctest::Approx(std::tan(x)));
    CHECK(Expression::parse("sqrt(abs(-x))")(x) == doctest::Approx(std::sqrt(x)));
    CHECK(Expression::parse("pi")(x) == std::numbers::pi);
    CHECK(Expression::parse("e")(x) == std::numbers::e);
    CHECK(Expression::parse("1/(2*x) + x^2")(x) == doctest::Approx(1.0 / (2 * x) + x * x));
    CHECK(Expression::parse("1.5e-3 * x")(2.0) == doctest::Approx(3e-3));
  }

  TEST_CASE("constant folding") {
    const auto c = Expression::parse("2 * pi - sin(0)");
    CHECK(c.is_constant());
    CHECK(c.constant_value() == doctest::Approx(2.0 * std::numbers::pi));
    CHECK_FALSE(Expression::parse("0 * x").is_constant());
    CHECK(std::isnan(Expression::parse("x").constant_value()));
    CHECK(Expression::constant(0.25)(123.0) == 0.25);
    CHECK(Expression::constant(0.25).text() == "0.25");
  }

  TEST_CASE("division by zero evaluates to a non-finite value") {
    CHECK_FALSE(std::isfinite(Expression::parse("1/x")(0.0)));
  }

  TEST_CASE("malformed input") {
    for (const char* bad : {"", "1 +", "(x", "x)", "foo(x)", "sin x", "pow(x)", "2 $ 3", "x x"}) {
      CAPTURE(bad);
      try {
        (void)Expression::parse(bad);
        FAIL("accepted");
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ExpressionParse);
      }
    }
  }
}
