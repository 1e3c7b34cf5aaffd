#pragma once

#include <cstdint>

#include "forge/flow.hpp"
#include "forge/lift.hpp"
#include "forge/nn_core.hpp"

namespace forge {

// One coordinate update frozen in time: x -> x + dt * a * tanh(w.x + b) e_j.
// Indices k (time step), i (term), j (coordinate) are 1-based to match the
// schedule listing; the coordinate acted on is j - 1.
struct SplitStep {
  int k = 0, i = 0, j = 0;
  double dt = 0.0;
  double a = 0.0;  // the j-th component of the frozen term amplitude
  Vec w;
  double b = 0.0;
};

// Steps ordered j fastest, then i, then k; applying them left to right
// approximates the flow of the field to first order in dt.
struct SplitSchedule {
  int n = 0, M = 0, N = 0;
  double tau = 0.0;
  std::vector<SplitStep> steps;
};

struct ErrorBudget {
  double total = 0.0;
  double lift = 0.0, flow = 0.0, disc = 0.0;
};

// dt = tau / n; coefficients frozen at the step's start time (k-1) dt.
// n must be a positive multiple of the interval count so frozen times never
// straddle a control jump.
SplitSchedule make_schedule(const PiecewiseConstantField& f, int n);

Vec apply_step(const SplitStep& s, const Vec& x);
Vec apply_schedule(const SplitSchedule& s, const Vec& x);

// sup over a box grid of |schedule(x) - flow(x)|_inf at reference resolution
double schedule_flow_gap(const SplitSchedule& s, const PiecewiseConstantField& f,
                         const BoxDomain& dom, int steps_per_interval = 64);

struct NPlan {
  int n = 0;
  double gap = 0.0;
  bool met = false;
};

// Smallest n = intervals * 2^k whose schedule stays within half the
// discretization budget of the integrated flow; stops at n_max and reports
// met = false when even that is not enough.
NPlan choose_n(const PiecewiseConstantField& f, const BoxDomain& dom,
               double disc_budget, int n_max = 1024);

ErrorBudget plan_budget(double eps);
ErrorBudget plan_budget(double eps, double lift_prop, double flow_prop,
                        double disc_prop);

// Width-N leaky-ReLU block reproducing the step map on dom to sup error
// <= tol, verified on a grid. Steps whose feature ignores their own
// coordinate compile exactly (hinge chain; error is the 1-d piecewise-linear
// fit alone); the rest fall back to a seeded least-squares fit. Throws
// ToleranceUnreachable with the best achieved error when max_depth (counted
// in activated layers) is not enough.
NarrowNet compile_step(const SplitStep& s, const BoxDomain& dom, double alpha,
                       double tol, int max_depth, std::uint64_t seed);

struct AssemblyResult {
  NarrowNet net;
  double lift_error = 0.0;   // target vs lift reproduction
  double flow_error = 0.0;   // lift reproduction vs integrated flow, after beta
  double disc_error = 0.0;   // integrated flow vs compiled blocks, after beta
  double total_error = 0.0;  // target vs assembled net
};

// beta . blocks . alpha as a single net of declared width d+1, with every
// adjacent affine pair merged. Stage errors are measured on the grid; the
// end-to-end error must stay within budget.total or BudgetExceeded is
// thrown carrying the three stage measurements.
AssemblyResult assemble(const LiftTriple& lift, const PiecewiseConstantField& field,
                        const std::vector<NarrowNet>& blocks,
                        const ErrorBudget& budget, const VecFn& target,
                        int steps_per_interval = 32);

}  // namespace forge
