#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace forge {

using Vec = std::vector<double>;

// Dense row-major matrix. Sizes in this project are tiny (<= 8 per side
// outside of layer counts), so no attempt at blocking or views.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double& operator()(int i, int j) { return a[i * cols + j]; }
  double operator()(int i, int j) const { return a[i * cols + j]; }

  static Mat identity(int n);
};

Vec matvec(const Mat& m, const Vec& x);
Mat matmul(const Mat& m, const Mat& n);
Mat transpose(const Mat& m);

// LU factorization with partial pivoting; det() returns 0 for a numerically
// singular matrix rather than throwing.
double lu_det(const Mat& m);

// Solve m x = b. Throws NonInvertibleError when the pivot collapses.
Vec lu_solve(const Mat& m, const Vec& b);

// Largest singular value via cyclic Jacobi on m^T m. Deterministic.
double spectral_norm(const Mat& m);

double norm2(const Vec& v);
double norm_inf(const Vec& v);
Vec vsub(const Vec& x, const Vec& y);
Vec vadd(const Vec& x, const Vec& y);

// ---- deterministic RNG --------------------------------------------------
//
// splitmix64 generator: identical sequences on every platform, no reliance
// on library distribution internals.
struct Rng {
  std::uint64_t state;
  explicit Rng(std::uint64_t seed) : state(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d4a2ca9da6d5a5ULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }
};

// ---- hex float round trip ----------------------------------------------

// Exact textual form of a double ("0x1.921fb54442d18p+1"); parse_hex_double
// recovers the identical bit pattern.
std::string hex_double(double v);
double parse_hex_double(const std::string& s);

// ---- grids --------------------------------------------------------------

// n evenly spaced points, endpoints included (n >= 2).
Vec linspace(double lo, double hi, int n);

// Visit every node of the tensor grid given per-dimension coordinate lists.
// f receives the point; iteration order is row-major over dimensions.
void tensor_grid(const std::vector<Vec>& axes, const std::function<void(const Vec&)>& f);

}  // namespace forge
