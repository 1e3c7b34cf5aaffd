#include "forge/lift.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "forge/errors.hpp"

namespace forge {

namespace {

// identity rows stacked over the all-ones row: x |-> (x, sum x)
AffineMap ascend_map(int d) {
  Mat W(d + 1, d);
  for (int i = 0; i < d; ++i) W(i, i) = 1.0;
  for (int j = 0; j < d; ++j) W(d, j) = 1.0;
  return AffineMap{std::move(W), Vec(d + 1, 0.0)};
}

// (y, s) |-> y - kappa * s * 1; kappa = 0 gives the plain projection
AffineMap descend_map(int d, double kappa) {
  Mat W(d, d + 1);
  for (int i = 0; i < d; ++i) {
    W(i, i) = 1.0;
    W(i, d) = -kappa;
  }
  return AffineMap{std::move(W), Vec(d, 0.0)};
}

std::vector<Vec> box_grid(const BoxDomain& box, int per_axis) {
  std::vector<Vec> axes(box.dim());
  for (int j = 0; j < box.dim(); ++j)
    axes[j] = linspace(box.lo[j], box.hi[j], per_axis);
  std::vector<Vec> pts;
  tensor_grid(axes, [&](const Vec& x) { pts.push_back(x); });
  return pts;
}

int check_grid_density(int dim) {
  switch (dim) {
    case 1: return 33;
    case 2: return 17;
    case 3: return 9;
    default: return 5;
  }
}

double measure_reproduction(const LiftTriple& t, const PolySurrogate& p) {
  double worst = 0.0;
  for (const Vec& x : box_grid(p.box, check_grid_density(p.box.dim()))) {
    Vec gap = vsub(lift_reproduce(t, x), poly_eval(p, x));
    worst = std::max(worst, norm_inf(gap));
  }
  return worst;
}

void require_square(const PolySurrogate& p) {
  if (p.out_dim != p.box.dim())
    throw StructureError("lift needs a square surrogate (out_dim == dim)");
}

}  // namespace

BoxDomain lifted_box(const BoxDomain& dom) {
  Vec lo = dom.lo, hi = dom.hi;
  double slo = 0.0, shi = 0.0;
  for (int j = 0; j < dom.dim(); ++j) {
    slo += dom.lo[j];
    shi += dom.hi[j];
  }
  lo.push_back(slo);
  hi.push_back(shi);
  return BoxDomain{std::move(lo), std::move(hi)};
}

Vec lift_image(const LiftTriple& t, const Vec& x) {
  return t.phi.eval(t.alpha_map.apply(x));
}

Vec lift_reproduce(const LiftTriple& t, const Vec& x) {
  return t.beta_map.apply(lift_image(t, x));
}

DiffeoReport verify_diffeo(const SmoothMap& phi, const BoxDomain& dom, int samples) {
  if (phi.dim != dom.dim() + 1)
    throw StructureError("verification map must live one dimension above the box");
  BoxDomain B = lifted_box(dom).inflate(0.1);
  DiffeoReport rep;

  rep.min_det = std::numeric_limits<double>::infinity();
  int per_axis = phi.dim == 2 ? 33 : (phi.dim == 3 ? 17 : (phi.dim == 4 ? 9 : 5));
  for (const Vec& u : box_grid(B, per_axis)) {
    rep.min_det = std::min(rep.min_det, lu_det(phi.jacobian(u)));
    ++rep.grid_points;
  }

  Rng rng(0x5eed2026ULL);
  auto sample = [&]() {
    Vec u(phi.dim);
    for (int j = 0; j < phi.dim; ++j) u[j] = rng.uniform(B.lo[j], B.hi[j]);
    return u;
  };
  rep.min_image_separation = std::numeric_limits<double>::infinity();
  for (int k = 0; k < samples; ++k) {
    Vec x = sample(), y = sample();
    int guard = 0;
    while (norm2(vsub(x, y)) < 1e-3 && ++guard < 1000) y = sample();
    double sep = norm2(vsub(phi.eval(x), phi.eval(y)));
    rep.min_image_separation = std::min(rep.min_image_separation, sep);
  }
  rep.injectivity_ok = samples == 0 || rep.min_image_separation > 0.0;
  rep.accepted = rep.min_det > 0.0 && rep.injectivity_ok;
  return rep;
}

LiftTriple build_lift_shear(const PolySurrogate& p, double kappa) {
  require_square(p);
  int d = p.box.dim();

  SmoothMap phi;
  phi.dim = d + 1;
  phi.eval = [p, kappa, d](const Vec& u) {
    Vec x(u.begin(), u.begin() + d);
    Vec y = poly_eval(p, x);
    for (int i = 0; i < d; ++i) y[i] += kappa * u[d];
    y.push_back(u[d]);
    return y;
  };
  phi.jacobian = [p, kappa, d](const Vec& u) {
    Vec x(u.begin(), u.begin() + d);
    Mat Jp = poly_jacobian(p, x);
    Mat J(d + 1, d + 1);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) J(i, j) = Jp(i, j);
      J(i, d) = kappa;
    }
    J(d, d) = 1.0;
    return J;
  };

  LiftTriple t;
  t.alpha_map = ascend_map(d);
  t.phi = std::move(phi);
  t.beta_map = descend_map(d, kappa);
  t.backend = LiftBackend::Shear;
  t.kappa = kappa;
  t.domain = p.box;
  t.report = verify_diffeo(t.phi, p.box, 2000);
  t.repro_error = measure_reproduction(t, p);
  return t;
}

LiftTriple build_lift_1d(const PolySurrogate& p, double kappa) {
  if (p.box.dim() != 1 || p.out_dim != 1)
    throw PreconditionViolated("monotone rearrangement lift needs a scalar surrogate");
  const double lo = p.box.lo[0], hi = p.box.hi[0];

  double max_slope = 0.0;
  for (double z : linspace(lo, hi, 33))
    max_slope = std::max(max_slope, std::abs(poly_jacobian(p, {z})(0, 0)));
  if (kappa <= max_slope)
    throw VerificationError("lift slope constant must exceed the surrogate slope bound");

  // clamped continuation keeps z -> ptilde(z) + kappa z strictly increasing on R
  auto ptilde = [p, lo, hi](double z) {
    return poly_eval(p, {std::clamp(z, lo, hi)})[0];
  };
  auto ptilde_slope = [p, lo, hi](double z) {
    if (z < lo || z > hi) return 0.0;
    return poly_jacobian(p, {z})(0, 0);
  };

  SmoothMap phi;
  phi.dim = 2;
  phi.eval = [ptilde, kappa](const Vec& u) {
    return Vec{ptilde(u[0]) + kappa * u[0], u[1]};
  };
  phi.jacobian = [ptilde_slope, kappa](const Vec& u) {
    Mat J(2, 2);
    J(0, 0) = ptilde_slope(u[0]) + kappa;
    J(1, 1) = 1.0;
    return J;
  };
  phi.inverse = [ptilde, kappa, lo, hi, p](const Vec& u) {
    double y = u[0];
    // bracket the unique root of ptilde(z) + kappa z = y, then bisect
    double plo = ptilde(lo), phi_v = ptilde(hi);
    double pmin = std::min(plo, phi_v), pmax = std::max(plo, phi_v);
    for (double z : linspace(lo, hi, 65)) {
      double v = poly_eval(p, {z})[0];
      pmin = std::min(pmin, v);
      pmax = std::max(pmax, v);
    }
    double a = (y - pmax) / kappa - 1.0, b = (y - pmin) / kappa + 1.0;
    while (ptilde(a) + kappa * a > y) a -= (b - a);
    while (ptilde(b) + kappa * b < y) b += (b - a);
    for (int it = 0; it < 200 && b - a > 0.0; ++it) {
      double mid = 0.5 * (a + b);
      if (mid <= a || mid >= b) break;
      if (ptilde(mid) + kappa * mid < y) a = mid;
      else b = mid;
    }
    return Vec{0.5 * (a + b), u[1]};
  };

  LiftTriple t;
  t.alpha_map = ascend_map(1);
  t.phi = std::move(phi);
  t.beta_map = descend_map(1, kappa);
  t.backend = LiftBackend::Monotone1d;
  t.kappa = kappa;
  t.domain = p.box;
  t.report = verify_diffeo(t.phi, p.box, 2000);
  if (!t.report.accepted)
    throw VerificationError("monotone rearrangement lift failed verification");
  t.repro_error = measure_reproduction(t, p);
  return t;
}

// ---- coupling backend ---------------------------------------------------

namespace {

constexpr double kScaleCap = 2.0;  // |log scaling| bound per layer
constexpr int kFeatures = 8;

struct CouplingLayer {
  int active = 0;
  Mat w;             // kFeatures x dim, zero column at `active`
  Vec b;             // kFeatures
  Vec theta_s, theta_t;
};

struct CouplingMap {
  int dim = 0;
  std::vector<CouplingLayer> layers;
};

struct LayerParts {
  double s = 0.0, t = 0.0;       // log-scale and shift
  Vec ds, dt;                    // gradients w.r.t. the input point
};

LayerParts layer_parts(const CouplingLayer& L, const Vec& x, bool grads) {
  LayerParts out;
  double u = 0.0;
  Vec feat(kFeatures), sech2(kFeatures);
  for (int r = 0; r < kFeatures; ++r) {
    double arg = L.b[r];
    for (size_t j = 0; j < x.size(); ++j) arg += L.w(r, j) * x[j];
    feat[r] = std::tanh(arg);
    sech2[r] = 1.0 - feat[r] * feat[r];
    u += L.theta_s[r] * feat[r];
    out.t += L.theta_t[r] * feat[r];
  }
  double tu = std::tanh(u);
  out.s = kScaleCap * tu;
  if (grads) {
    out.ds.assign(x.size(), 0.0);
    out.dt.assign(x.size(), 0.0);
    double outer = kScaleCap * (1.0 - tu * tu);
    for (int r = 0; r < kFeatures; ++r)
      for (size_t j = 0; j < x.size(); ++j) {
        out.ds[j] += outer * L.theta_s[r] * sech2[r] * L.w(r, j);
        out.dt[j] += L.theta_t[r] * sech2[r] * L.w(r, j);
      }
  }
  return out;
}

Vec coupling_forward(const CouplingMap& m, Vec x, double* log_det = nullptr) {
  double ld = 0.0;
  for (const CouplingLayer& L : m.layers) {
    LayerParts parts = layer_parts(L, x, false);
    x[L.active] = x[L.active] * std::exp(parts.s) + parts.t;
    ld += parts.s;
  }
  if (log_det != nullptr) *log_det = ld;
  return x;
}

Vec coupling_inverse(const CouplingMap& m, Vec y) {
  for (auto it = m.layers.rbegin(); it != m.layers.rend(); ++it) {
    LayerParts parts = layer_parts(*it, y, false);  // inputs to s,t are untouched
    y[it->active] = (y[it->active] - parts.t) * std::exp(-parts.s);
  }
  return y;
}

Mat coupling_jacobian(const CouplingMap& m, Vec x) {
  int D = m.dim;
  Mat J(D, D);
  for (int i = 0; i < D; ++i) J(i, i) = 1.0;
  for (const CouplingLayer& L : m.layers) {
    LayerParts parts = layer_parts(L, x, true);
    double scale = std::exp(parts.s);
    Mat JL(D, D);
    for (int i = 0; i < D; ++i) JL(i, i) = 1.0;
    for (int j = 0; j < D; ++j)
      JL(L.active, j) = (j == L.active ? scale : 0.0) +
                        x[L.active] * scale * parts.ds[j] + parts.dt[j];
    J = matmul(JL, J);
    x[L.active] = x[L.active] * scale + parts.t;
  }
  return J;
}

}  // namespace

LiftTriple build_lift_coupling(const PolySurrogate& p, int layers,
                               std::uint64_t seed, int budget) {
  require_square(p);
  if (layers < 0) throw PreconditionViolated("layer count must be nonnegative");
  int d = p.box.dim(), D = d + 1;

  CouplingMap map;
  map.dim = D;
  Rng rng(seed);
  for (int l = 0; l < layers; ++l) {
    CouplingLayer L;
    L.active = l % D;
    L.w = Mat(kFeatures, D);
    L.b = Vec(kFeatures);
    for (int r = 0; r < kFeatures; ++r) {
      for (int j = 0; j < D; ++j)
        L.w(r, j) = j == L.active ? 0.0 : rng.uniform(-1.5, 1.5);
      L.b[r] = rng.uniform(-1.0, 1.0);
    }
    L.theta_s = Vec(kFeatures, 0.0);
    L.theta_t = Vec(kFeatures, 0.0);
    map.layers.push_back(std::move(L));
  }

  AffineMap alpha = ascend_map(d);
  std::vector<Vec> pts = box_grid(p.box, check_grid_density(d));
  std::vector<Vec> lifted, want;
  for (const Vec& x : pts) {
    lifted.push_back(alpha.apply(x));
    want.push_back(poly_eval(p, x));
  }

  int P = layers * 2 * kFeatures;
  auto unpack = [&](const Vec& th) {
    CouplingMap mm = map;
    int q = 0;
    for (CouplingLayer& L : mm.layers) {
      for (int r = 0; r < kFeatures; ++r) L.theta_s[r] = th[q++];
      for (int r = 0; r < kFeatures; ++r) L.theta_t[r] = th[q++];
    }
    return mm;
  };
  auto residuals = [&](const Vec& th) {
    CouplingMap mm = unpack(th);
    Vec r;
    r.reserve(pts.size() * d);
    for (size_t k = 0; k < pts.size(); ++k) {
      Vec y = coupling_forward(mm, lifted[k]);
      for (int c = 0; c < d; ++c) r.push_back(y[c] - want[k][c]);
    }
    return r;
  };
  auto cost_of = [](const Vec& r) {
    double s = 0.0;
    for (double v : r) s += v * v;
    return s;
  };

  Vec theta(P, 0.0);
  bool hit_budget = false;
  int iters = 0;
  if (P > 0 && budget > 0) {
    Vec r = residuals(theta);
    double cost = cost_of(r);
    double lambda = 1e-3;
    int stagnant = 0;
    while (iters < budget) {
      ++iters;
      int R = static_cast<int>(r.size());
      Mat J(R, P);
      for (int q = 0; q < P; ++q) {
        double h = 1e-6 * (1.0 + std::abs(theta[q]));
        Vec th = theta;
        th[q] += h;
        Vec rp = residuals(th);
        for (int i = 0; i < R; ++i) J(i, q) = (rp[i] - r[i]) / h;
      }
      Mat JtJ(P, P);
      Vec Jtr(P, 0.0);
      for (int i = 0; i < R; ++i)
        for (int q = 0; q < P; ++q) Jtr[q] += J(i, q) * r[i];
      for (int a = 0; a < P; ++a)
        for (int bq = a; bq < P; ++bq) {
          double s = 0.0;
          for (int i = 0; i < R; ++i) s += J(i, a) * J(i, bq);
          JtJ(a, bq) = s;
          JtJ(bq, a) = s;
        }
      bool accepted = false;
      for (int tries = 0; tries < 8 && !accepted; ++tries) {
        Mat A = JtJ;
        for (int q = 0; q < P; ++q) A(q, q) += lambda * (JtJ(q, q) + 1e-12);
        Vec step;
        try {
          step = lu_solve(A, Jtr);
        } catch (const NonInvertibleError&) {
          lambda *= 10.0;
          continue;
        }
        Vec th = theta;
        for (int q = 0; q < P; ++q) th[q] -= step[q];
        Vec rn = residuals(th);
        double cn = cost_of(rn);
        if (cn < cost) {
          double gain = (cost - cn) / std::max(cost, 1e-300);
          theta = std::move(th);
          r = std::move(rn);
          cost = cn;
          lambda = std::max(lambda / 3.0, 1e-12);
          accepted = true;
          stagnant = gain < 1e-6 ? stagnant + 1 : 0;
        } else {
          lambda *= 2.5;
        }
      }
      if (!accepted || stagnant >= 4 || cost < 1e-24) break;
    }
    if (iters >= budget) hit_budget = true;
  }
  map = unpack(theta);

  SmoothMap phi;
  phi.dim = D;
  phi.eval = [map](const Vec& u) { return coupling_forward(map, u); };
  phi.jacobian = [map](const Vec& u) { return coupling_jacobian(map, u); };
  phi.inverse = [map](const Vec& u) { return coupling_inverse(map, u); };
  phi.log_det = [map](const Vec& u) {
    double ld = 0.0;
    coupling_forward(map, u, &ld);
    return ld;
  };

  LiftTriple t;
  t.alpha_map = std::move(alpha);
  t.phi = std::move(phi);
  t.beta_map = descend_map(d, 0.0);
  t.backend = LiftBackend::Coupling;
  t.kappa = 0.0;
  t.domain = p.box;
  t.budget_exhausted = hit_budget;
  t.report = verify_diffeo(t.phi, p.box, 2000);
  t.repro_error = measure_reproduction(t, p);
  t.fit_error = t.repro_error;
  return t;
}

LiftTriple build_lift_auto(const PolySurrogate& p, double kappa,
                           std::uint64_t seed, int budget) {
  require_square(p);
  if (p.box.dim() == 1) return build_lift_1d(p, kappa);
  LiftTriple shear = build_lift_shear(p, kappa);
  if (shear.report.accepted) return shear;
  return build_lift_coupling(p, 2 * (p.box.dim() + 1), seed, budget);
}

}  // namespace forge
