#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "forge/errors.hpp"
#include "forge/target_lang.hpp"

using namespace forge;

namespace {

double eval1(const std::string& src, const Vec& x, int hint = 0) {
  TargetFunction f = parse_target(src, hint);
  return eval_target(f, x)[0];
}

std::size_t parse_fail_pos(const std::string& src, int hint = 0) {
  try {
    parse_target(src, hint);
  } catch (const ParseError& e) {
    return e.pos;
  }
  FAIL("expected a parse error for: ", src);
  return static_cast<std::size_t>(-1);
}

}  // namespace

TEST_CASE("worked examples") {
  TargetFunction f = parse_target("sin(pi*x1)+x2^2");
  CHECK(f.d_x == 2);
  CHECK(f.d_y == 1);
  CHECK(eval_target(f, {0.5, 2.0})[0] == doctest::Approx(5.0).epsilon(1e-15));

  TargetFunction g = parse_target("sqnorm(x)", 2);
  CHECK(g.d_x == 2);
  CHECK(eval_target(g, {1.0, 1.0})[0] == 2.0);
}

TEST_CASE("precedence and associativity") {
  CHECK(eval1("2+3*4^2", {0.0}) == 50.0);
  CHECK(eval1("2^3^2", {0.0}) == 512.0);  // right associative
  CHECK(eval1("x1-x2-x3", {10.0, 3.0, 2.0}) == 5.0);
  CHECK(eval1("x1-(x2-x3)", {10.0, 3.0, 2.0}) == 9.0);
  CHECK(eval1("x1/x2/x3", {24.0, 4.0, 3.0}) == 2.0);
  CHECK(eval1("x1/(x2/x3)", {24.0, 4.0, 3.0}) == 18.0);
  // '-' binds tighter than '^' consumption: -x1^2 is (-x1)^2
  CHECK(eval1("-x1^2", {3.0}) == 9.0);
  CHECK(eval1("-(x1^2)", {3.0}) == -9.0);
  CHECK(eval1("--x1", {7.0}) == 7.0);
}

TEST_CASE("literals and whitespace") {
  CHECK(eval1("1e3", {0.0}) == 1000.0);
  CHECK(eval1(".5+x1", {0.25}) == 0.75);
  CHECK(eval1("2.5e-2", {0.0}) == 0.025);
  CHECK(eval1("  sin( pi * x1 ) + x2 ^ 2 ", {0.5, 2.0}) ==
        doctest::Approx(5.0).epsilon(1e-15));
  CHECK(eval1("pi", {0.0}) == M_PI);
}

TEST_CASE("functions") {
  CHECK(eval1("abs(x1)-abs(x2)", {-3.0, 2.0}) == 1.0);
  CHECK(eval1("tanh(x1)", {0.0}) == 0.0);
  CHECK(eval1("cos(x1)", {0.0}) == 1.0);
  CHECK(eval1("exp(x1)", {1.0}) == doctest::Approx(std::exp(1.0)));
  CHECK(eval1("sqnorm(x1,x2,x1*x2)", {2.0, 3.0}) == 4.0 + 9.0 + 36.0);
  CHECK(eval1("sqnorm(x1)", {5.0}) == 25.0);
  CHECK(eval1("sqnorm( x )", {1.0, 2.0, 3.0}, 3) == 14.0);
}

TEST_CASE("multi output and dimension inference") {
  TargetFunction f = parse_target("x2;x1");
  CHECK(f.d_x == 2);
  CHECK(f.d_y == 2);
  Vec y = eval_target(f, {3.0, 4.0});
  CHECK(y[0] == 4.0);
  CHECK(y[1] == 3.0);

  TargetFunction g = parse_target("x1;x1*x1;1-x1;");  // trailing ';' tolerated
  CHECK(g.d_y == 3);
  CHECK(g.d_x == 1);

  TargetFunction h = parse_target("x1+x2", 5);  // hint widens the domain
  CHECK(h.d_x == 5);
}

TEST_CASE("parse errors carry a byte position") {
  CHECK(parse_fail_pos("1 + * 2") == 4);
  CHECK(parse_fail_pos("x0+1") == 0);
  CHECK(parse_fail_pos("foo(1)") == 0);
  CHECK(parse_fail_pos("x3", 2) == 0);
  CHECK(parse_fail_pos("sin(0.5") == 7);
  CHECK(parse_fail_pos("(x1+1") == 5);
  CHECK(parse_fail_pos("") == 0);
  CHECK(parse_fail_pos("1e") == 1);
  CHECK(parse_fail_pos("x1 x2") == 3);
  CHECK_THROWS_AS(parse_target("sin 0.5"), ParseError);
  CHECK_THROWS_AS(parse_target("1..2"), ParseError);
}

TEST_CASE("evaluation domain errors") {
  CHECK_THROWS_AS(eval1("x1/x2", {1.0, 0.0}), EvalDomainError);
  CHECK_THROWS_AS(eval1("exp(x1)", {1000.0}), EvalDomainError);
  CHECK_THROWS_AS(eval1("x1^x2", {-1.0, 0.5}), EvalDomainError);  // nan power
  TargetFunction f = parse_target("x1+x2");
  CHECK_THROWS_AS(eval_target(f, {1.0}), StructureError);
}

TEST_CASE("print parse round trip is a structural fixed point") {
  const char* sources[] = {
      "sin(pi*x1)+x2^2",   "x1*(x2+3)/(x1-4.5)", "-x1^2",
      "-(x1^2)",           "2^3^2",              "(x1+x2)*x1",
      "1/(1+exp(-x1))",    "abs(x1)-abs(x2)",    "sqnorm(x1,x2,x1*x2)",
      "sqnorm(x)",         "tanh(cos(x1))",      "x1-x2-x3",
      "x1-(x2-x3)",        "x1/x2/x3",           "x1/(x2/x3)",
      "2e3*x1",            "1.5e-2+x1",          "x2;x1",
      "-x1;x1^-x2",        "pi*pi-x1",
  };
  for (const char* src : sources) {
    CAPTURE(src);
    TargetFunction f = parse_target(src, 3);
    std::string printed = print_target(f);
    TargetFunction g = parse_target(printed, 3);
    REQUIRE(f.d_y == g.d_y);
    for (int j = 0; j < f.d_y; ++j) CHECK(expr_equal(f.outputs[j], g.outputs[j]));
    CHECK(print_target(g) == printed);  // printing is idempotent
  }
}

TEST_CASE("builtins match closed forms") {
  Rng rng(2024);
  TargetFunction sq = builtin_target("sqnorm", 3);
  TargetFunction idm = builtin_target("identity_d", 4);
  TargetFunction sw = builtin_target("swap2");
  for (int it = 0; it < 500; ++it) {
    Vec x3 = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    double want = x3[0] * x3[0] + x3[1] * x3[1] + x3[2] * x3[2];
    CHECK(eval_target(sq, x3)[0] == doctest::Approx(want).epsilon(1e-15));

    Vec x4 = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2),
              rng.uniform(-2, 2)};
    Vec y4 = eval_target(idm, x4);
    for (int j = 0; j < 4; ++j) CHECK(y4[j] == x4[j]);

    Vec x2 = {rng.uniform(-2, 2), rng.uniform(-2, 2)};
    Vec y2 = eval_target(sw, x2);
    CHECK(y2[0] == x2[1]);
    CHECK(y2[1] == x2[0]);
  }
  CHECK_THROWS_AS(builtin_target("nope"), StructureError);
  CHECK(builtin_names().size() == 5);
}

TEST_CASE("curve builtins") {
  TargetFunction c = builtin_target("four_curve");
  CHECK(c.is_polyline());
  CHECK(c.d_x == 1);
  CHECK(c.d_y == 2);
  Vec p0 = eval_target(c, {0.0});
  CHECK(p0[0] == -1.0);
  CHECK(p0[1] == 0.0);
  Vec p1 = eval_target(c, {1.0});
  CHECK(p1[0] == 0.0);
  CHECK(p1[1] == 1.0);
  Vec mid = eval_target(c, {0.5});
  CHECK(mid[0] == doctest::Approx(0.5));
  CHECK(mid[1] == doctest::Approx(-0.5));
  // parameter clamps outside [0, 1]
  CHECK(eval_target(c, {-0.5})[0] == -1.0);
  CHECK(eval_target(c, {2.0})[1] == 1.0);
  CHECK(print_target(c) == "four_curve");

  TargetFunction c3 = builtin_target("four_curve_3d");
  CHECK(c3.d_y == 3);
  Vec q0 = eval_target(c3, {0.0});
  CHECK(q0[2] == 0.1);
  Vec q1 = eval_target(c3, {1.0 / 3.0});
  CHECK(q1[0] == doctest::Approx(1.0));
  CHECK(q1[2] == doctest::Approx(0.0));
}
