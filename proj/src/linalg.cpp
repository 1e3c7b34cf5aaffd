#include "forge/linalg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "forge/errors.hpp"

namespace forge {

Mat Mat::identity(int n) {
  Mat m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Vec matvec(const Mat& m, const Vec& x) {
  if (static_cast<int>(x.size()) != m.cols)
    throw StructureError("matvec: size mismatch");
  Vec y(m.rows, 0.0);
  for (int i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < m.cols; ++j) s += m(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

Mat matmul(const Mat& m, const Mat& n) {
  if (m.cols != n.rows) throw StructureError("matmul: size mismatch");
  Mat r(m.rows, n.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int k = 0; k < m.cols; ++k) {
      double v = m(i, k);
      if (v == 0.0) continue;
      for (int j = 0; j < n.cols; ++j) r(i, j) += v * n(k, j);
    }
  return r;
}

Mat transpose(const Mat& m) {
  Mat t(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

namespace {

// Returns permutation sign, or 0 if a pivot vanished. lu is overwritten.
int lu_factor(Mat& lu, std::vector<int>& piv) {
  int n = lu.rows;
  piv.resize(n);
  for (int i = 0; i < n; ++i) piv[i] = i;
  int sign = 1;
  for (int k = 0; k < n; ++k) {
    int p = k;
    double best = std::fabs(lu(k, k));
    for (int i = k + 1; i < n; ++i) {
      double v = std::fabs(lu(i, k));
      if (v > best) { best = v; p = i; }
    }
    if (best == 0.0) return 0;
    if (p != k) {
      for (int j = 0; j < n; ++j) std::swap(lu.a[p * n + j], lu.a[k * n + j]);
      std::swap(piv[p], piv[k]);
      sign = -sign;
    }
    for (int i = k + 1; i < n; ++i) {
      lu(i, k) /= lu(k, k);
      double f = lu(i, k);
      if (f == 0.0) continue;
      for (int j = k + 1; j < n; ++j) lu(i, j) -= f * lu(k, j);
    }
  }
  return sign;
}

}  // namespace

double lu_det(const Mat& m) {
  if (m.rows != m.cols) throw StructureError("det: matrix not square");
  Mat lu = m;
  std::vector<int> piv;
  int sign = lu_factor(lu, piv);
  if (sign == 0) return 0.0;
  double d = sign;
  for (int i = 0; i < m.rows; ++i) d *= lu(i, i);
  return d;
}

Vec lu_solve(const Mat& m, const Vec& b) {
  if (m.rows != m.cols) throw NonInvertibleError("solve: matrix not square");
  if (static_cast<int>(b.size()) != m.rows)
    throw StructureError("solve: rhs size mismatch");
  int n = m.rows;
  Mat lu = m;
  std::vector<int> piv;
  if (lu_factor(lu, piv) == 0) throw NonInvertibleError("solve: singular matrix");
  Vec x(n);
  for (int i = 0; i < n; ++i) x[i] = b[piv[i]];
  for (int i = 1; i < n; ++i)
    for (int j = 0; j < i; ++j) x[i] -= lu(i, j) * x[j];
  for (int i = n - 1; i >= 0; --i) {
    for (int j = i + 1; j < n; ++j) x[i] -= lu(i, j) * x[j];
    x[i] /= lu(i, i);
  }
  return x;
}

double spectral_norm(const Mat& m) {
  // Jacobi eigenvalue sweep on the (small) Gram matrix.
  Mat g = matmul(transpose(m), m);
  int n = g.rows;
  if (n == 0) return 0.0;
  if (n == 1) return std::sqrt(std::max(0.0, g(0, 0)));
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += g(p, q) * g(p, q);
    if (off < 1e-300) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (g(p, q) == 0.0) continue;
        double theta = (g(q, q) - g(p, p)) / (2.0 * g(p, q));
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double gkp = g(k, p), gkq = g(k, q);
          g(k, p) = c * gkp - s * gkq;
          g(k, q) = s * gkp + c * gkq;
        }
        for (int k = 0; k < n; ++k) {
          double gpk = g(p, k), gqk = g(q, k);
          g(p, k) = c * gpk - s * gqk;
          g(q, k) = s * gpk + c * gqk;
        }
      }
  }
  double lam = 0.0;
  for (int i = 0; i < n; ++i) lam = std::max(lam, g(i, i));
  return std::sqrt(std::max(0.0, lam));
}

double norm2(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double norm_inf(const Vec& v) {
  double s = 0.0;
  for (double x : v) s = std::max(s, std::fabs(x));
  return s;
}

Vec vsub(const Vec& x, const Vec& y) {
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - y[i];
  return r;
}

Vec vadd(const Vec& x, const Vec& y) {
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] + y[i];
  return r;
}

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hex_double(const std::string& s) {
  const char* p = s.c_str();
  bool neg = false;
  if (*p == '+' || *p == '-') { neg = (*p == '-'); ++p; }
  if (p[0] == '0' && (p[1] == 'x' || p[1] == 'X')) p += 2;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(p, s.c_str() + s.size(), v, std::chars_format::hex);
  if (ec != std::errc() || ptr != s.c_str() + s.size())
    throw SchemaError("bad hex float: " + s);
  return neg ? -v : v;
}

Vec linspace(double lo, double hi, int n) {
  if (n < 2) throw StructureError("linspace: need n >= 2");
  Vec v(n);
  for (int i = 0; i < n; ++i)
    v[i] = lo + (hi - lo) * static_cast<double>(i) / (n - 1);
  v[0] = lo;
  v[n - 1] = hi;
  return v;
}

void tensor_grid(const std::vector<Vec>& axes, const std::function<void(const Vec&)>& f) {
  int d = static_cast<int>(axes.size());
  Vec pt(d);
  std::vector<int> idx(d, 0);
  while (true) {
    for (int k = 0; k < d; ++k) pt[k] = axes[k][idx[k]];
    f(pt);
    int k = d - 1;
    while (k >= 0) {
      if (++idx[k] < static_cast<int>(axes[k].size())) break;
      idx[k] = 0;
      --k;
    }
    if (k < 0) break;
  }
}

}  // namespace forge
