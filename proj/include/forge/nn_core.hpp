#pragma once

#include <string>
#include <vector>

#include "forge/linalg.hpp"

namespace forge {

// Leaky-ReLU slope parameter. Any positive value except 1 is allowed; values
// above 1 are legal and give the mirrored expansion/contraction pair.
struct Activation {
  double alpha;
  explicit Activation(double a);
};

double leaky_relu(double s, double alpha);
double leaky_relu_inverse(double s, double alpha);

// y = W x + b. For square W the nonsingularity verdict is decided once at
// construction: |det W| >= 1e-12 * scale^n with scale = max |entry|.
struct AffineMap {
  Mat W;
  Vec b;
  bool nonsingular = false;

  AffineMap() = default;
  AffineMap(Mat w, Vec bias);

  int rows() const { return W.rows; }
  int cols() const { return W.cols; }
  Vec apply(const Vec& x) const { return vadd(matvec(W, x), b); }
};

struct Layer {
  AffineMap map;
  bool activated = false;
};

// Affine/activation chain. The final affine is never activated, and every
// layer output before it has at most declared_width entries.
struct NarrowNet {
  int input_dim = 0;
  int output_dim = 0;
  int declared_width = 0;
  double alpha = 0.5;
  std::vector<Layer> layers;

  NarrowNet() = default;
  NarrowNet(int d_in, int d_out, int width, double alpha_, std::vector<Layer> ls);

  int depth_activated() const;
};

Vec eval_net(const NarrowNet& net, const Vec& x);

// Exact preimage. Requires d_in == d_out == declared_width and every affine
// square and nonsingular; throws NonInvertibleError otherwise.
Vec invert_net(const NarrowNet& net, const Vec& y);

// Smallest hidden width sufficient for uniform approximation of continuous
// maps from a d_x-dimensional compact box into R^{d_y}:
//   max(d_x + 1, d_y), plus one exactly when d_y == d_x + 1.
int min_width(int d_x, int d_y);

// JSON text with decimal and hexadecimal copies of every coefficient; the
// hexadecimal fields are authoritative on load, so a round trip is
// bit-exact.
std::string serialize_net(const NarrowNet& net);
NarrowNet deserialize_net(const std::string& text);

// Axis-aligned box domain with nonempty interior in every coordinate.
struct BoxDomain {
  Vec lo, hi;

  BoxDomain() = default;
  BoxDomain(Vec l, Vec h);

  int dim() const { return static_cast<int>(lo.size()); }
  double width(int j) const { return hi[j] - lo[j]; }
  bool contains(const Vec& x, double slack = 0.0) const;
  Vec center() const;
  // Same box with every side extended by `factor` of its half-width.
  BoxDomain inflate(double factor) const;
};

}  // namespace forge
