#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "forge/errors.hpp"
#include "forge/lift.hpp"

using namespace forge;

namespace {

PolySurrogate square_1d() {
  auto f = [](const Vec& x) -> Vec { return {x[0] * x[0]}; };
  return fit_polynomial(f, 1, BoxDomain{{-1.0}, {1.0}}, {2});
}

PolySurrogate swap_2d() {
  auto f = [](const Vec& x) -> Vec { return {x[1], x[0]}; };
  return fit_polynomial(f, 2, BoxDomain{{-1.0, -1.0}, {1.0, 1.0}}, {1, 1});
}

PolySurrogate rotation_2d() {
  const double ang = M_PI / 6.0;
  auto f = [ang](const Vec& x) -> Vec {
    return {std::cos(ang) * x[0] - std::sin(ang) * x[1],
            std::sin(ang) * x[0] + std::cos(ang) * x[1]};
  };
  return fit_polynomial(f, 2, BoxDomain{{-1.0, -1.0}, {1.0, 1.0}}, {1, 1});
}

}  // namespace

TEST_CASE("ascending box gains the coordinate sum axis") {
  BoxDomain dom{{-1.0, 2.0}, {1.0, 5.0}};
  BoxDomain up = lifted_box(dom);
  REQUIRE(up.dim() == 3);
  CHECK(up.lo[0] == -1.0);
  CHECK(up.hi[1] == 5.0);
  CHECK(up.lo[2] == 1.0);
  CHECK(up.hi[2] == 6.0);
}

TEST_CASE("shear triple reproduces the square function step by step") {
  PolySurrogate p = square_1d();
  LiftTriple t = build_lift_shear(p, 2.2);

  Vec up = t.alpha_map.apply({0.5});
  REQUIRE(up.size() == 2);
  CHECK(up[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(up[1] == doctest::Approx(0.5).epsilon(1e-14));

  Vec mid = t.phi.eval(up);
  CHECK(mid[0] == doctest::Approx(1.35).epsilon(1e-12));
  CHECK(mid[1] == doctest::Approx(0.5).epsilon(1e-12));

  Vec down = t.beta_map.apply(mid);
  CHECK(down[0] == doctest::Approx(0.25).epsilon(1e-12));

  CHECK(t.repro_error <= 1e-12);
  CHECK(t.kappa == 2.2);
}

TEST_CASE("shear of a non monotone scalar target is rejected") {
  PolySurrogate p = square_1d();
  LiftTriple t = build_lift_shear(p, 2.2);
  // det of the step map equals the surrogate slope, negative left of zero
  CHECK(t.report.min_det < 0.0);
  CHECK_FALSE(t.report.accepted);
  CHECK(t.report.grid_points == 33 * 33);
}

TEST_CASE("shear of the coordinate swap reports determinant minus one") {
  PolySurrogate p = swap_2d();
  LiftTriple t = build_lift_shear(p, 2.0);
  CHECK(std::abs(t.report.min_det - (-1.0)) <= 1e-9);
  CHECK_FALSE(t.report.accepted);
  // the factorization itself is still exact
  Vec y = lift_reproduce(t, {1.0, 2.0});
  CHECK(y[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(t.repro_error <= 1e-12);
}

TEST_CASE("zero target shears to an exact zero reproduction") {
  auto f = [](const Vec&) -> Vec { return {0.0}; };
  PolySurrogate p = fit_polynomial(f, 1, BoxDomain{{-1.0}, {1.0}}, {2});
  LiftTriple t = build_lift_shear(p, 1.0);
  CHECK(t.repro_error == 0.0);
}

TEST_CASE("identity map one dimension up is accepted") {
  SmoothMap id;
  id.dim = 3;
  id.eval = [](const Vec& u) { return u; };
  id.jacobian = [](const Vec& u) {
    Mat J(static_cast<int>(u.size()), static_cast<int>(u.size()));
    for (size_t i = 0; i < u.size(); ++i)
      J(static_cast<int>(i), static_cast<int>(i)) = 1.0;
    return J;
  };
  DiffeoReport rep = verify_diffeo(id, BoxDomain{{-1.0, -1.0}, {1.0, 1.0}}, 500);
  CHECK(rep.accepted);
  CHECK(rep.min_det == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(rep.injectivity_ok);
  CHECK(rep.min_image_separation > 0.0);
}

TEST_CASE("monotone rearrangement accepts the square function") {
  PolySurrogate p = square_1d();
  LiftTriple t = build_lift_1d(p, 2.2);
  CHECK(t.backend == LiftBackend::Monotone1d);
  CHECK(t.report.accepted);
  // slope bound: 2.2 - 2 = 0.2 inside the box, 2.2 in the clamped region
  CHECK(t.report.min_det >= 0.2);
  CHECK(t.report.min_det <= 0.3);
  CHECK(t.repro_error <= 1e-12);

  Vec mid = t.phi.eval(t.alpha_map.apply({0.5}));
  CHECK(mid[0] == doctest::Approx(1.35).epsilon(1e-12));
  Vec down = t.beta_map.apply(mid);
  CHECK(down[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("monotone rearrangement requires a winning slope constant") {
  PolySurrogate p = square_1d();
  CHECK_THROWS_AS(build_lift_1d(p, 2.0), VerificationError);
  CHECK_THROWS_AS(build_lift_1d(p, 1.0), VerificationError);
  CHECK_NOTHROW(build_lift_1d(p, 2.001));
}

TEST_CASE("monotone rearrangement inverts to full precision") {
  PolySurrogate p = square_1d();
  LiftTriple t = build_lift_1d(p, 2.2);
  REQUIRE(t.phi.inverse);
  BoxDomain B = lifted_box(p.box).inflate(0.1);
  Rng rng(31);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    Vec u{rng.uniform(B.lo[0], B.hi[0]), rng.uniform(B.lo[1], B.hi[1])};
    Vec back = t.phi.inverse(t.phi.eval(u));
    worst = std::max(worst, norm_inf(vsub(back, u)));
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("constant target rearranges to a pure shift") {
  auto f = [](const Vec&) -> Vec { return {3.0}; };
  PolySurrogate p = fit_polynomial(f, 1, BoxDomain{{-1.0}, {1.0}}, {2});
  LiftTriple t = build_lift_1d(p, 1.0);
  CHECK(t.report.accepted);
  CHECK(t.report.min_det == doctest::Approx(1.0).epsilon(1e-12));
  Vec y = t.phi.eval({0.25, 0.0});
  CHECK(y[0] == doctest::Approx(3.25).epsilon(1e-12));
}

TEST_CASE("coupling fit of the identity needs no motion") {
  auto f = [](const Vec& x) -> Vec { return {x[0], x[1]}; };
  PolySurrogate p = fit_polynomial(f, 2, BoxDomain{{-1.0, -1.0}, {1.0, 1.0}}, {1, 1});
  LiftTriple t = build_lift_coupling(p, 2, 7, 20);
  CHECK(t.backend == LiftBackend::Coupling);
  CHECK(t.fit_error <= 1e-3);
  CHECK(t.report.accepted);
  CHECK(t.report.min_det > 0.0);
  CHECK_FALSE(t.budget_exhausted);
}

TEST_CASE("coupling fit of the swap is an accepted diffeomorphism") {
  PolySurrogate p = swap_2d();
  LiftTriple t = build_lift_coupling(p, 6, 7, 40);
  CHECK(t.report.accepted);
  CHECK(t.report.min_det > 0.0);
  CHECK(t.report.injectivity_ok);
  CHECK(t.fit_error < 2.0);  // strictly better than the identity baseline

  // analytic log determinant agrees with the Jacobian determinant
  REQUIRE(t.phi.log_det);
  BoxDomain B = lifted_box(p.box).inflate(0.1);
  Rng rng(55);
  for (int k = 0; k < 20; ++k) {
    Vec u{rng.uniform(B.lo[0], B.hi[0]), rng.uniform(B.lo[1], B.hi[1]),
          rng.uniform(B.lo[2], B.hi[2])};
    double det = lu_det(t.phi.jacobian(u));
    REQUIRE(det > 0.0);
    CHECK(std::abs(std::log(det) - t.phi.log_det(u)) <= 1e-10);
  }
}

TEST_CASE("coupling map inverts layer by layer") {
  PolySurrogate p = swap_2d();
  LiftTriple t = build_lift_coupling(p, 6, 7, 40);
  REQUIRE(t.phi.inverse);
  BoxDomain B = lifted_box(p.box).inflate(0.1);
  Rng rng(99);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    Vec u{rng.uniform(B.lo[0], B.hi[0]), rng.uniform(B.lo[1], B.hi[1]),
          rng.uniform(B.lo[2], B.hi[2])};
    Vec back = t.phi.inverse(t.phi.eval(u));
    worst = std::max(worst, norm_inf(vsub(back, u)));
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("zero coupling layers leave the identity in place") {
  PolySurrogate p = swap_2d();
  LiftTriple t = build_lift_coupling(p, 0, 7, 10);
  // beta . phi . alpha is then the plain projection back to x
  CHECK(t.fit_error == doctest::Approx(2.0).epsilon(1e-12));
  CHECK_FALSE(t.budget_exhausted);
  CHECK(t.report.accepted);
  CHECK(t.report.min_det == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("coupling fit is deterministic and flags a spent budget") {
  PolySurrogate p = swap_2d();
  LiftTriple a = build_lift_coupling(p, 6, 7, 1);
  LiftTriple b = build_lift_coupling(p, 6, 7, 1);
  CHECK(a.budget_exhausted);
  CHECK(a.fit_error == b.fit_error);
  CHECK(a.report.min_det == b.report.min_det);
}

TEST_CASE("backend selection follows the dimension and the verdict") {
  PolySurrogate sq = square_1d();
  CHECK(build_lift_auto(sq, 2.2, 3, 10).backend == LiftBackend::Monotone1d);

  PolySurrogate rot = rotation_2d();
  LiftTriple t_rot = build_lift_auto(rot, 2.0, 3, 10);
  CHECK(t_rot.backend == LiftBackend::Shear);
  CHECK(t_rot.report.accepted);
  CHECK(t_rot.report.min_det == doctest::Approx(1.0).epsilon(1e-9));

  PolySurrogate sw = swap_2d();
  LiftTriple t_sw = build_lift_auto(sw, 2.0, 3, 25);
  CHECK(t_sw.backend == LiftBackend::Coupling);
  CHECK(t_sw.report.accepted);
  CHECK(t_sw.report.min_det > 0.0);
}

TEST_CASE("shape violations are refused") {
  auto f = [](const Vec& x) -> Vec { return {x[0] * x[0] + x[1] * x[1]}; };
  PolySurrogate tall =
      fit_polynomial(f, 1, BoxDomain{{-1.0, -1.0}, {1.0, 1.0}}, {2, 2});
  CHECK_THROWS_AS(build_lift_shear(tall, 2.0), StructureError);
  CHECK_THROWS_AS(build_lift_coupling(tall, 2, 7, 5), StructureError);
  CHECK_THROWS_AS(build_lift_auto(tall, 2.0, 7, 5), StructureError);

  PolySurrogate sw = swap_2d();
  CHECK_THROWS_AS(build_lift_1d(sw, 2.0), PreconditionViolated);
  CHECK_THROWS_AS(build_lift_coupling(sw, -1, 7, 5), PreconditionViolated);

  SmoothMap id;
  id.dim = 2;
  id.eval = [](const Vec& u) { return u; };
  id.jacobian = [](const Vec&) { return Mat(2, 2); };
  CHECK_THROWS_AS(verify_diffeo(id, BoxDomain{{-1.0, -1.0}, {1.0, 1.0}}, 10),
                  StructureError);
}
