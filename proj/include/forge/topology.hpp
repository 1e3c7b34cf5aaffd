#pragma once

#include <cstdint>
#include <vector>

#include "forge/nn_core.hpp"

namespace forge {

// Open polygonal chain, uniformly parameterized over [0, 1].
struct Polyline {
  int dim = 2;
  std::vector<Vec> vertices;

  Vec at(double t) const;
  int segments() const { return static_cast<int>(vertices.size()) - 1; }
};

// The '4'-shaped test curve. dim == 2 gives the planar chain through
// (-1,0), (1,0), (0,-1), (0,1), which crosses itself at the origin.
// dim == 3 lifts the first vertex to height z_lift, which removes the
// crossing for every z_lift > 0.
Polyline four_curve(int dim, double z_lift = 0.1);

struct CurveIntersection {
  int seg_a = 0, seg_b = 0;
  double t_a = 0.0, t_b = 0.0;  // global curve parameters in [0, 1]
  Vec point;
};

// Transversal crossings between non-adjacent segments. Planar decisions use
// orientation signs with an exact rational fallback near degeneracy; in
// three dimensions a pair is reported when the segment distance is at most
// tol.
std::vector<CurveIntersection> self_intersections(const Polyline& c, double tol = 1e-9);

enum class ForcedVerdict { Intersects, NoIntersection };

struct ForcedCheck {
  ForcedVerdict verdict = ForcedVerdict::NoIntersection;
  double t_a = 0.0, t_b = 0.0;
  Vec point;
  double sup_distance = 0.0;  // measured distance to the reference curve
};

// For a planar curve h with sup_t |h(t) - four_curve(t)| < eps0 < 1, the
// strand shadowing the horizontal bar must cross the strand shadowing the
// vertical bar. Throws PreconditionViolated when h is not eps0-close.
ForcedCheck forced_intersection_check(const Polyline& h, double eps0);

struct Width1Probe {
  bool monotone = false;
  bool increasing = false;
  double sup_error_vs_square = 0.0;  // against x^2 on [-1, 1]
};

// Evaluates a scalar width-1 net on a 1001-point grid over [-1, 1], checks
// that its increments never change sign, and measures the distance to x^2.
Width1Probe monotone_width1_probe(const NarrowNet& net);

// Seeded refine-and-jitter perturbation of the planar '4'-curve; every
// vertex moves by at most `amplitude` in euclidean norm.
Polyline perturbed_four_curve(double amplitude, std::uint64_t seed, int refine = 8);

NarrowNet random_width1_net(int max_depth, Rng& rng);

// Smallest sup error against x^2 found by seeded random search over
// width-1 nets. Stays above 1/2 no matter how long the search runs.
double best_width1_error(int iterations, int max_depth, std::uint64_t seed);

}  // namespace forge
