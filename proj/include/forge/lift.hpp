#pragma once

#include <cstdint>
#include <functional>

#include "forge/nn_core.hpp"
#include "forge/poly_approx.hpp"

namespace forge {

// A map of R^n with an analytic Jacobian. `inverse` may be empty when no
// closed-form or iterative inverse is available.
struct SmoothMap {
  int dim = 0;
  std::function<Vec(const Vec&)> eval;
  std::function<Mat(const Vec&)> jacobian;
  std::function<Vec(const Vec&)> inverse;   // may be empty
  std::function<double(const Vec&)> log_det;  // may be empty; closed form when set
};

// Numerical evidence that a map is an orientation-preserving diffeomorphism:
// grid minimum of det(Jacobian) plus a sampled injectivity check.
struct DiffeoReport {
  bool accepted = false;
  double min_det = 0.0;
  bool injectivity_ok = false;
  double min_image_separation = 0.0;
  long grid_points = 0;
};

enum class LiftBackend {
  Shear,       // explicit shear by kappa times the ascending coordinate
  Monotone1d,  // strictly increasing scalar rearrangement, d = 1 only
  Coupling     // fitted coupling layers, positive Jacobian by construction
};

// Factorization p = beta . phi . alpha with alpha, beta affine and phi a
// (claimed) diffeomorphism one dimension up.
struct LiftTriple {
  AffineMap alpha_map;  // R^d -> R^{d+1}
  SmoothMap phi;        // R^{d+1} -> R^{d+1}
  AffineMap beta_map;   // R^{d+1} -> R^d
  LiftBackend backend = LiftBackend::Shear;
  DiffeoReport report;
  double fit_error = 0.0;    // coupling backend: achieved sup gap on the grid
  double repro_error = 0.0;  // sup |beta(phi(alpha(x))) - p(x)| on the grid
  double kappa = 0.0;
  bool budget_exhausted = false;
  BoxDomain domain;  // box the surrogate was built on
};

// Box image of alpha: the original axes plus the coordinate-sum axis.
BoxDomain lifted_box(const BoxDomain& dom);

Vec lift_image(const LiftTriple& t, const Vec& x);      // phi(alpha(x))
Vec lift_reproduce(const LiftTriple& t, const Vec& x);  // beta(phi(alpha(x)))

// Grid + sampled-pair verification over the 10% inflated lifted box.
// Rejection is a value in the report, never an exception.
DiffeoReport verify_diffeo(const SmoothMap& phi, const BoxDomain& dom, int samples);

// alpha(x) = (x, sum x); phi(x, s) = (p(x) + kappa*s*1, s); beta undoes the
// shear. Exact reproduction, but phi is only a diffeomorphism when the
// surrogate Jacobian determinant stays positive; the report says which.
LiftTriple build_lift_shear(const PolySurrogate& p, double kappa);

// d = 1 only: phi(z, s) = (ptilde(z) + kappa*z, s) with ptilde the clamped
// continuation of p, a strictly increasing bijection of R. Throws
// VerificationError unless kappa beats the grid slope bound and the
// verification accepts.
LiftTriple build_lift_1d(const PolySurrogate& p, double kappa);

// Stack of coupling layers (one coordinate rescaled by exp(capped tanh) and
// shifted, as a function of the others) fitted so beta . phi . alpha tracks
// p on the grid. Positive Jacobian determinant everywhere by construction.
LiftTriple build_lift_coupling(const PolySurrogate& p, int layers,
                               std::uint64_t seed, int budget);

// d = 1 -> monotone rearrangement; otherwise try the shear and fall back to
// the coupling fit when verification rejects it.
LiftTriple build_lift_auto(const PolySurrogate& p, double kappa,
                           std::uint64_t seed, int budget);

}  // namespace forge
