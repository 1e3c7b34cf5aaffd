#include "forge/poly_approx.hpp"

#include <algorithm>
#include <cmath>

#include "forge/errors.hpp"

namespace forge {

namespace {

// first-kind nodes cos(pi (k + 1/2) / (n + 1)), k = 0..n
Vec cheb_nodes(int n) {
  Vec t(n + 1);
  for (int k = 0; k <= n; ++k) t[k] = std::cos(M_PI * (k + 0.5) / (n + 1));
  return t;
}

// samples at the nodes above -> coefficients of the plain sum  sum a_j T_j
Vec dct_coeffs(const Vec& samples) {
  int np = static_cast<int>(samples.size());
  Vec a(np, 0.0);
  for (int j = 0; j < np; ++j) {
    double s = 0.0;
    for (int k = 0; k < np; ++k) s += samples[k] * std::cos(M_PI * j * (k + 0.5) / np);
    a[j] = s * (j == 0 ? 1.0 : 2.0) / np;
  }
  return a;
}

double clenshaw(const double* a, int np, double t) {
  double b1 = 0.0, b2 = 0.0;
  for (int k = np - 1; k >= 1; --k) {
    double b = 2.0 * t * b1 - b2 + a[k];
    b2 = b1;
    b1 = b;
  }
  return t * b1 - b2 + a[0];
}

// coefficients of d/dt (sum a_j T_j)
Vec deriv_coeffs(const Vec& a) {
  int np = static_cast<int>(a.size());
  Vec d(np, 0.0);
  if (np < 2) return d;
  for (int k = np - 1; k >= 1; --k) {
    double up = k + 2 <= np - 1 ? d[k + 1] : 0.0;
    d[k - 1] = up + 2.0 * k * a[k];
  }
  d[0] *= 0.5;
  return d;
}

// apply a 1-d transform along one axis of a row-major tensor
void transform_axis(Vec& data, const std::vector<int>& sizes, int axis,
                    const std::function<Vec(const Vec&)>& op) {
  int stride = 1;
  for (size_t k = axis + 1; k < sizes.size(); ++k) stride *= sizes[k];
  int s = sizes[axis];
  int block = stride * s;
  int total = static_cast<int>(data.size());
  Vec line(s);
  for (int base = 0; base < total; base += block) {
    for (int off = 0; off < stride; ++off) {
      for (int q = 0; q < s; ++q) line[q] = data[base + off + q * stride];
      Vec out = op(line);
      for (int q = 0; q < s; ++q) data[base + off + q * stride] = out[q];
    }
  }
}

// contract the tensor against Chebyshev values axis by axis, last axis
// first (it is contiguous, and stays contiguous after each contraction)
double eval_tensor(const Vec& coeffs, const std::vector<int>& sizes, const Vec& t) {
  Vec cur = coeffs;
  int d = static_cast<int>(sizes.size());
  for (int axis = d - 1; axis >= 0; --axis) {
    int s = sizes[axis];
    int lines = static_cast<int>(cur.size()) / s;
    Vec next(lines);
    for (int l = 0; l < lines; ++l) next[l] = clenshaw(&cur[l * s], s, t[axis]);
    cur = std::move(next);
  }
  return cur[0];
}

Vec to_unit(const PolySurrogate& p, const Vec& x) {
  int d = p.box.dim();
  Vec t(d);
  for (int j = 0; j < d; ++j) {
    double c = 0.5 * (p.box.lo[j] + p.box.hi[j]);
    double h = 0.5 * (p.box.hi[j] - p.box.lo[j]);
    t[j] = (x[j] - c) / h;
  }
  return t;
}

std::vector<int> tensor_sizes(const PolySurrogate& p) {
  std::vector<int> s;
  for (int n : p.degree) s.push_back(n + 1);
  return s;
}

// shared refinement protocol: uniform grids with endpoints, 33 per axis,
// doubled until the running max changes by less than 10%
double stabilized_grid_max(const BoxDomain& box,
                           const std::function<double(const Vec&)>& score) {
  int d = box.dim();
  double prev = -1.0;
  double est = 0.0;
  for (int n = 33; n <= 513; n = 2 * n - 1) {
    double points = std::pow(static_cast<double>(n), d);
    if (prev >= 0.0 && points > 8e6) break;  // keep high dimensions tractable
    std::vector<Vec> axes(d);
    for (int j = 0; j < d; ++j) axes[j] = linspace(box.lo[j], box.hi[j], n);
    double m = 0.0;
    tensor_grid(axes, [&](const Vec& x) { m = std::max(m, score(x)); });
    est = m;
    if (prev >= 0.0) {
      double rel = std::abs(est - prev) / std::max({est, prev, 1e-30});
      if (rel < 0.1) return est;
    }
    prev = est;
  }
  return est;
}

}  // namespace

PolySurrogate fit_polynomial(const VecFn& f, int out_dim, const BoxDomain& dom,
                             const std::vector<int>& degree) {
  int d = dom.dim();
  if (static_cast<int>(degree.size()) != d)
    throw PreconditionViolated("one degree per input dimension required");
  if (out_dim < 1) throw PreconditionViolated("out_dim must be positive");
  long total = 1;
  for (int n : degree) {
    if (n < 0) throw PreconditionViolated("degrees must be nonnegative");
    total *= n + 1;
    if (total > (1 << 22)) throw PreconditionViolated("coefficient tensor too large");
  }

  PolySurrogate p;
  p.box = dom;
  p.degree = degree;
  p.out_dim = out_dim;

  std::vector<Vec> axes(d);
  for (int j = 0; j < d; ++j) {
    Vec t = cheb_nodes(degree[j]);
    double c = 0.5 * (dom.lo[j] + dom.hi[j]);
    double h = 0.5 * (dom.hi[j] - dom.lo[j]);
    axes[j].resize(t.size());
    for (size_t k = 0; k < t.size(); ++k) axes[j][k] = c + h * t[k];
  }

  p.coeffs.assign(out_dim, Vec(total));
  long idx = 0;
  tensor_grid(axes, [&](const Vec& x) {
    Vec y = f(x);
    if (static_cast<int>(y.size()) != out_dim)
      throw StructureError("sampled function has wrong output dimension");
    for (int j = 0; j < out_dim; ++j) {
      if (!std::isfinite(y[j])) throw EvalDomainError("non-finite sample in fit");
      p.coeffs[j][idx] = y[j];
    }
    ++idx;
  });

  std::vector<int> sizes = tensor_sizes(p);
  for (int j = 0; j < out_dim; ++j)
    for (int axis = 0; axis < d; ++axis)
      transform_axis(p.coeffs[j], sizes, axis, dct_coeffs);

  p.eps_p = verify_sup_error(p, f);
  p.kappa = lipschitz_bound(p);
  return p;
}

PolySurrogate fit_polynomial(const TargetFunction& f, const BoxDomain& dom,
                             const std::vector<int>& degree) {
  if (dom.dim() != f.d_x)
    throw PreconditionViolated("domain dimension does not match target");
  return fit_polynomial([&f](const Vec& x) { return eval_target(f, x); }, f.d_y, dom,
                        degree);
}

Vec poly_eval(const PolySurrogate& p, const Vec& x) {
  if (static_cast<int>(x.size()) != p.box.dim())
    throw PreconditionViolated("point dimension mismatch");
  Vec t = to_unit(p, x);
  std::vector<int> sizes = tensor_sizes(p);
  Vec y(p.out_dim);
  for (int j = 0; j < p.out_dim; ++j) y[j] = eval_tensor(p.coeffs[j], sizes, t);
  return y;
}

Mat poly_jacobian(const PolySurrogate& p, const Vec& x) {
  if (static_cast<int>(x.size()) != p.box.dim())
    throw PreconditionViolated("point dimension mismatch");
  int d = p.box.dim();
  Vec t = to_unit(p, x);
  std::vector<int> sizes = tensor_sizes(p);
  Mat jac(p.out_dim, d);
  for (int j = 0; j < p.out_dim; ++j) {
    for (int axis = 0; axis < d; ++axis) {
      Vec work = p.coeffs[j];
      transform_axis(work, sizes, axis, deriv_coeffs);
      double h = 0.5 * (p.box.hi[axis] - p.box.lo[axis]);
      jac(j, axis) = eval_tensor(work, sizes, t) / h;
    }
  }
  return jac;
}

double lipschitz_bound(const PolySurrogate& p) {
  double worst = stabilized_grid_max(
      p.box, [&](const Vec& x) { return spectral_norm(poly_jacobian(p, x)); });
  return std::max(1.0, 1.1 * worst);
}

double verify_sup_error(const PolySurrogate& p, const VecFn& f) {
  return stabilized_grid_max(p.box, [&](const Vec& x) {
    return norm_inf(vsub(f(x), poly_eval(p, x)));
  });
}

}  // namespace forge
