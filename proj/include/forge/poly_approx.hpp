#pragma once

#include <functional>
#include <vector>

#include "forge/nn_core.hpp"
#include "forge/target_lang.hpp"

namespace forge {

using VecFn = std::function<Vec(const Vec&)>;

// Tensor Chebyshev surrogate p for a target on a box, with a grid-certified
// sup error and the Lipschitz bound used downstream by the lift stage.
struct PolySurrogate {
  BoxDomain box;
  std::vector<int> degree;     // per input dimension
  int out_dim = 1;
  std::vector<Vec> coeffs;     // one row-major coefficient tensor per output
  double eps_p = 0.0;          // max |f - p| over the verification grid
  double kappa = 1.0;          // >= 1.1 x max Jacobian operator norm seen
};

// Interpolation at tensor first-kind Chebyshev nodes. Fills eps_p (against
// the sampled f) and kappa before returning.
PolySurrogate fit_polynomial(const VecFn& f, int out_dim, const BoxDomain& dom,
                             const std::vector<int>& degree);
PolySurrogate fit_polynomial(const TargetFunction& f, const BoxDomain& dom,
                             const std::vector<int>& degree);

Vec poly_eval(const PolySurrogate& p, const Vec& x);

// Analytic Jacobian from the Chebyshev derivative recurrence (no finite
// differences).
Mat poly_jacobian(const PolySurrogate& p, const Vec& x);

// 1.1 x the largest Jacobian operator norm over the verification grid,
// floored at 1.0.
double lipschitz_bound(const PolySurrogate& p);

// Max |f - p|_inf over uniform grids with endpoints: 33 points per axis,
// doubled until the estimate moves by less than 10%.
double verify_sup_error(const PolySurrogate& p, const VecFn& f);

}  // namespace forge
