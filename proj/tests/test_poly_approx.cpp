#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "forge/errors.hpp"
#include "forge/poly_approx.hpp"

using namespace forge;

namespace {

BoxDomain unit1() { return BoxDomain{{-1.0}, {1.0}}; }

PolySurrogate fit_expr(const std::string& src, const BoxDomain& box,
                       std::vector<int> degree, int hint = 0) {
  return fit_polynomial(parse_target(src, hint), box, degree);
}

}  // namespace

TEST_CASE("square function has the textbook coefficients") {
  PolySurrogate p = fit_expr("x1^2", unit1(), {2});
  REQUIRE(p.coeffs.size() == 1);
  REQUIRE(p.coeffs[0].size() == 3);
  CHECK(p.coeffs[0][0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(std::abs(p.coeffs[0][1]) < 1e-14);
  CHECK(p.coeffs[0][2] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(p.eps_p <= 1e-14);
  CHECK(p.kappa == doctest::Approx(2.2).epsilon(1e-12));
}

TEST_CASE("constant and linear fits") {
  PolySurrogate c = fit_expr("1", unit1(), {5});
  CHECK(c.coeffs[0][0] == doctest::Approx(1.0).epsilon(1e-15));
  for (int j = 1; j <= 5; ++j) CHECK(std::abs(c.coeffs[0][j]) < 1e-15);
  CHECK(c.eps_p <= 1e-15);
  CHECK(c.kappa == 1.0);  // floor rule for flat functions

  PolySurrogate lin = fit_expr("3*x1", unit1(), {4});
  CHECK(lin.eps_p <= 1e-14);
  CHECK(lin.kappa == doctest::Approx(3.3).epsilon(1e-12));
}

TEST_CASE("smooth targets converge fast") {
  PolySurrogate s9 = fit_expr("sin(pi*x1)", unit1(), {9});
  CHECK(s9.eps_p <= 1e-4);
  PolySurrogate s15 = fit_expr("sin(pi*x1)", unit1(), {15});
  CHECK(s15.eps_p <= 1e-9);
}

TEST_CASE("refining the degree never makes smooth fits worse") {
  double prev_sin = 1e100, prev_sq = 1e100;
  for (int n = 2; n <= 12; ++n) {
    double e_sin = fit_expr("sin(pi*x1)", unit1(), {n}).eps_p;
    CHECK(e_sin <= prev_sin + 1e-13);
    prev_sin = e_sin;

    double e_sq =
        fit_expr("sqnorm(x)", BoxDomain{{-1.0, -1.0}, {1.0, 1.0}}, {n, n}, 2).eps_p;
    CHECK(e_sq <= prev_sq + 1e-13);
    prev_sq = e_sq;
  }
}

TEST_CASE("polynomials of matching degree reproduce exactly") {
  PolySurrogate cubic = fit_expr("x1^3-2*x1+0.25", unit1(), {3});
  CHECK(cubic.eps_p <= 1e-12);

  BoxDomain box2{{-1.0, 0.0}, {2.0, 3.0}};
  PolySurrogate mixed = fit_expr("x1^2*x2-0.5*x2+1", box2, {2, 1});
  CHECK(mixed.eps_p <= 1e-12 * 12.0);  // coefficient scale on this box

  // degree above the true one changes nothing
  PolySurrogate over = fit_expr("x1^3-2*x1+0.25", unit1(), {7});
  CHECK(over.eps_p <= 1e-12);
}

TEST_CASE("evaluation matches independent Horner forms") {
  BoxDomain box2{{-1.0, -1.0}, {1.5, 2.0}};
  PolySurrogate p = fit_expr("x1^2*x2-0.5*x2+1", box2, {2, 1});
  Rng rng(31);
  for (int it = 0; it < 300; ++it) {
    Vec x = {rng.uniform(-1.0, 1.5), rng.uniform(-1.0, 2.0)};
    double want = x[0] * x[0] * x[1] - 0.5 * x[1] + 1.0;
    CHECK(poly_eval(p, x)[0] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("analytic jacobian agrees with central differences") {
  BoxDomain box2{{-1.0, -1.0}, {1.0, 1.0}};
  PolySurrogate p = fit_expr("sin(pi*x1)+x2^2*x1;cos(pi*x2)", box2, {14, 14}, 2);
  REQUIRE(p.out_dim == 2);
  Rng rng(47);
  for (int it = 0; it < 50; ++it) {
    Vec x = {rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};
    Mat jac = poly_jacobian(p, x);
    double h = 1e-6;
    for (int col = 0; col < 2; ++col) {
      Vec xp = x, xm = x;
      xp[col] += h;
      xm[col] -= h;
      Vec fp = poly_eval(p, xp), fm = poly_eval(p, xm);
      for (int row = 0; row < 2; ++row) {
        double fd = (fp[row] - fm[row]) / (2 * h);
        CHECK(jac(row, col) == doctest::Approx(fd).epsilon(1e-5));
      }
    }
  }
  // exact check on the square function
  PolySurrogate sq = fit_expr("x1^2", unit1(), {2});
  CHECK(poly_jacobian(sq, {0.3})(0, 0) == doctest::Approx(0.6).epsilon(1e-13));
}

TEST_CASE("kappa dominates the gradient everywhere we look") {
  BoxDomain box2{{-1.0, -1.0}, {2.0, 2.0}};
  PolySurrogate p = fit_expr("sqnorm(x)", box2, {2, 2}, 2);
  // gradient of |x|^2 peaks at the far corner of the box
  CHECK(p.kappa == doctest::Approx(1.1 * 2.0 * std::sqrt(8.0)).epsilon(1e-12));
  Rng rng(11);
  for (int it = 0; it < 200; ++it) {
    Vec x = {rng.uniform(-1, 2), rng.uniform(-1, 2)};
    CHECK(spectral_norm(poly_jacobian(p, x)) <= p.kappa + 1e-9);
  }
  CHECK(lipschitz_bound(p) == doctest::Approx(p.kappa));
}

TEST_CASE("fit rejects bad requests") {
  CHECK_THROWS_AS(fit_expr("x1^2", unit1(), {2, 2}), PreconditionViolated);
  CHECK_THROWS_AS(fit_expr("x1^2", unit1(), {-1}), PreconditionViolated);
  CHECK_THROWS_AS(fit_expr("exp(1000*x1)", unit1(), {4}), EvalDomainError);
  BoxDomain box2{{-1.0, -1.0}, {1.0, 1.0}};
  CHECK_THROWS_AS(fit_expr("x1^2", box2, {2}), PreconditionViolated);
  PolySurrogate p = fit_expr("x1^2", unit1(), {2});
  CHECK_THROWS_AS(poly_eval(p, {0.0, 0.0}), PreconditionViolated);
  CHECK_THROWS_AS(poly_jacobian(p, {0.0, 0.0}), PreconditionViolated);
}

TEST_CASE("surrogate works on shifted boxes") {
  BoxDomain box{{2.0}, {5.0}};
  PolySurrogate p = fit_expr("x1^2", box, {2});
  CHECK(p.eps_p <= 1e-12);
  CHECK(poly_eval(p, {3.0})[0] == doctest::Approx(9.0).epsilon(1e-13));
  // derivative 2x peaks at x = 5
  CHECK(p.kappa == doctest::Approx(11.0).epsilon(1e-12));
}

TEST_CASE("degree one axes keep the right slope") {
  // a linear fit must not double its derivative
  PolySurrogate lin = fit_expr("3*x1", unit1(), {1});
  CHECK(poly_jacobian(lin, {0.2})(0, 0) == doctest::Approx(3.0).epsilon(1e-13));
  CHECK(poly_jacobian(lin, {-0.9})(0, 0) == doctest::Approx(3.0).epsilon(1e-13));

  BoxDomain box2{{-1.0, -1.0}, {1.0, 1.0}};
  PolySurrogate sw = fit_expr("x2; x1", box2, {1, 1}, 2);
  Mat J = poly_jacobian(sw, {0.3, -0.4});
  CHECK(J(0, 0) == doctest::Approx(0.0).epsilon(1e-13));
  CHECK(J(0, 1) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(J(1, 0) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(J(1, 1) == doctest::Approx(0.0).epsilon(1e-13));
  CHECK(lu_det(J) == doctest::Approx(-1.0).epsilon(1e-12));
}
