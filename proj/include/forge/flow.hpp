#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "forge/nn_core.hpp"

namespace forge {

// One tanh term a * tanh(w . x + b) of the control field.
struct FieldTerm {
  Vec a, w;
  double b = 0.0;
};

struct FieldInterval {
  double t0 = 0.0, t1 = 0.0;
  std::vector<FieldTerm> terms;
};

// v(x, t) = sum_i a_i(t) tanh(w_i(t) . x + b_i(t)) with piecewise-constant
// coefficients; intervals partition [0, tau] exactly.
struct PiecewiseConstantField {
  int dim = 0;
  double tau = 0.0;
  std::vector<FieldInterval> intervals;
};

void validate_field(const PiecewiseConstantField& f);

// control lookup, right-open intervals, last interval closed
const FieldInterval& interval_at(const PiecewiseConstantField& f, double t);

Vec field_velocity(const FieldInterval& iv, const Vec& x);

struct FlowResult {
  Vec z;
  long steps = 0;
  double est_error = 0.0;  // coarse first-step Richardson estimate
};

// Classical 4th-order fixed-step integration; steps never straddle an
// interval boundary. Throws EvalDomainError with the time of blow-up if the
// state leaves the finite range.
FlowResult integrate(const PiecewiseConstantField& f, const Vec& x0,
                     int steps_per_interval);

// Integrates the time-reversed negated field, so that
// integrate(f, inverse_flow(f, y)) lands back on y.
Vec inverse_flow(const PiecewiseConstantField& f, const Vec& y, int steps_per_interval);

// ---- fitting ------------------------------------------------------------

enum class FieldStructure {
  Generic,    // every term free
  SelfFree,   // terms drive one coordinate and never read it
};

struct FlowFit {
  PiecewiseConstantField field;
  double sup_error = 0.0;     // max euclidean gap to the target on the fit points
  bool budget_exhausted = false;
  int iterations = 0;
};

// Seeded deterministic fit of the control coefficients so the time-1 flow
// matches the target map: ridge least-squares collocation along straight
// homotopy paths for the initialization, then finite-difference
// Levenberg-Marquardt on the integrated flow error.
FlowFit fit_flow(const std::function<Vec(const Vec&)>& target, const BoxDomain& dom,
                 int M, int intervals, std::uint64_t seed, int budget);

// Same optimizer on an explicit point set (used by the pipeline, which fits
// on the image of the input box, not on a full-dimensional grid).
// driven_coord picks the coordinate SelfFree terms move; pass -1 with
// Generic structure.
FlowFit fit_flow_points(const std::function<Vec(const Vec&)>& target,
                        const std::vector<Vec>& pts, int dim, int M, int intervals,
                        std::uint64_t seed, int budget, FieldStructure structure,
                        int driven_coord = -1);

// JSON with hex-float twins; hex is authoritative on load.
std::string field_to_json(const PiecewiseConstantField& f);
PiecewiseConstantField field_from_json(const std::string& text);

}  // namespace forge
