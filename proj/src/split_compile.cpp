#include "forge/split_compile.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "forge/errors.hpp"

namespace forge {

namespace {

double dot(const Vec& w, const Vec& x) {
  double s = 0.0;
  for (size_t m = 0; m < w.size(); ++m) s += w[m] * x[m];
  return s;
}

int grid_axis_points(int dim) {
  if (dim <= 1) return 33;
  if (dim == 2) return 9;
  if (dim == 3) return 5;
  return 3;
}

std::vector<Vec> box_grid(const BoxDomain& dom, int per_axis) {
  std::vector<Vec> axes;
  for (int j = 0; j < dom.dim(); ++j) axes.push_back(linspace(dom.lo[j], dom.hi[j], per_axis));
  std::vector<Vec> pts;
  tensor_grid(axes, [&](const Vec& x) { pts.push_back(x); });
  return pts;
}

// range of w . x + b over the box
void feature_range(const Vec& w, double b, const BoxDomain& dom, double* lo, double* hi) {
  double a = b, c = b;
  for (int m = 0; m < dom.dim(); ++m) {
    double p = w[m] * dom.lo[m], q = w[m] * dom.hi[m];
    a += std::min(p, q);
    c += std::max(p, q);
  }
  *lo = a;
  *hi = c;
}

// ---- scalar piecewise-linear fit ---------------------------------------
//
// delta(s) = u + v s + sum_l gamma_l leaky(s - t_l), fitted toward the
// sup-norm optimum by Lawson iteration (weighted least squares with weights
// inflated by residual size) plus a local knot search.

struct PlFit {
  double u = 0.0, v = 0.0;
  Vec t, gamma;
  double sup = std::numeric_limits<double>::infinity();
};

double lawson_solve(const Vec& s, const Vec& g, const Vec& t, double alpha, int rounds,
                    double* u, double* v, Vec* gamma) {
  const int K = static_cast<int>(t.size());
  const int P = K + 2;
  const int m = static_cast<int>(s.size());
  auto basis = [&](int i, int p) -> double {
    if (p == 0) return 1.0;
    if (p == 1) return s[i];
    return leaky_relu(s[i] - t[p - 2], alpha);
  };
  Vec wgt(m, 1.0), sol(P, 0.0);
  double sup = std::numeric_limits<double>::infinity();
  for (int round = 0; round < rounds; ++round) {
    Mat G(P, P);
    Vec rhs(P, 0.0);
    for (int i = 0; i < m; ++i) {
      for (int p = 0; p < P; ++p) {
        double bp = basis(i, p);
        rhs[p] += wgt[i] * bp * g[i];
        for (int q = p; q < P; ++q) G(p, q) += wgt[i] * bp * basis(i, q);
      }
    }
    for (int p = 0; p < P; ++p) {
      for (int q = 0; q < p; ++q) G(p, q) = G(q, p);
      G(p, p) += 1e-13 * (1.0 + G(p, p));
    }
    try {
      sol = lu_solve(G, rhs);
    } catch (const NonInvertibleError&) {
      break;
    }
    double mx = 0.0;
    Vec resid(m);
    for (int i = 0; i < m; ++i) {
      double y = 0.0;
      for (int p = 0; p < P; ++p) y += sol[p] * basis(i, p);
      resid[i] = std::abs(y - g[i]);
      mx = std::max(mx, resid[i]);
    }
    sup = mx;
    if (mx < 1e-17) break;
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
      wgt[i] *= resid[i] + 1e-4 * mx;
      total += wgt[i];
    }
    for (int i = 0; i < m; ++i) wgt[i] *= m / total;
  }
  *u = sol[0];
  *v = sol[1];
  gamma->assign(P - 2, 0.0);
  for (int p = 2; p < P; ++p) (*gamma)[p - 2] = sol[p];
  return sup;
}

PlFit fit_pl(const std::function<double(double)>& g, double s_lo, double s_hi, int K,
             double alpha) {
  if (s_hi - s_lo < 1e-9) {
    double mid = 0.5 * (s_lo + s_hi);
    s_lo = mid - 5e-10;
    s_hi = mid + 5e-10;
  }
  const int m = 1025;
  Vec ss = linspace(s_lo, s_hi, m);
  Vec gg(m);
  for (int i = 0; i < m; ++i) gg[i] = g(ss[i]);

  PlFit fit;
  if (K == 0) {
    fit.sup = lawson_solve(ss, gg, fit.t, alpha, 30, &fit.u, &fit.v, &fit.gamma);
    return fit;
  }

  // seed knots by equidistributing |g''|^(1/2)
  double ds = (s_hi - s_lo) / (m - 1);
  Vec cum(m, 0.0);
  double scale = 0.0;
  for (int i = 1; i + 1 < m; ++i)
    scale = std::max(scale, std::abs(gg[i + 1] - 2.0 * gg[i] + gg[i - 1]));
  for (int i = 1; i < m; ++i) {
    double c2 = 0.0;
    if (i + 1 < m) c2 = std::abs(gg[i + 1] - 2.0 * gg[i] + gg[i - 1]);
    cum[i] = cum[i - 1] + std::sqrt(c2 + 1e-6 * (scale + 1e-300)) * ds;
  }
  Vec knots(K);
  int at = 0;
  for (int l = 0; l < K; ++l) {
    double want = cum[m - 1] * (l + 1.0) / (K + 1.0);
    while (at + 1 < m && cum[at] < want) ++at;
    knots[l] = ss[at];
  }
  // strictly increasing, interior
  for (int l = 0; l < K; ++l) {
    double floor_t = s_lo + (s_hi - s_lo) * 1e-3 * (l + 1);
    if (l > 0) floor_t = std::max(floor_t, knots[l - 1] + (s_hi - s_lo) * 1e-4);
    knots[l] = std::min(std::max(knots[l], floor_t), s_hi - (s_hi - s_lo) * 1e-3 * (K - l));
  }

  fit.t = knots;
  fit.sup = lawson_solve(ss, gg, fit.t, alpha, 24, &fit.u, &fit.v, &fit.gamma);

  // local knot refinement: per-knot candidate moves, keep improvements
  for (int pass = 0; pass < 2; ++pass) {
    for (int l = 0; l < K; ++l) {
      double left = l > 0 ? fit.t[l - 1] : s_lo;
      double right = l + 1 < K ? fit.t[l + 1] : s_hi;
      for (double frac : {-0.3, -0.12, 0.12, 0.3}) {
        Vec cand = fit.t;
        double room = frac < 0 ? fit.t[l] - left : right - fit.t[l];
        cand[l] = fit.t[l] + frac * room;
        double cu, cv;
        Vec cg;
        double sup = lawson_solve(ss, gg, cand, alpha, 12, &cu, &cv, &cg);
        if (sup < fit.sup) {
          fit.t = cand;
          fit.u = cu;
          fit.v = cv;
          fit.gamma = cg;
          fit.sup = sup;
        }
      }
    }
  }
  return fit;
}

// ---- exact hinge-chain block -------------------------------------------
//
// For a step whose feature w . x + b never reads the step's own coordinate,
// the block below reproduces x -> x + delta(w . x + b) e_j exactly, where
// delta is the fitted piecewise-linear displacement. Each hinge costs two
// activated layers: the first puts the real kink leaky(s - t_l) in the donor
// slot, the second flips its sign so that the following affine can read
// leaky(-h) = -alpha (s - t_l) and rebuild both the next kink argument and,
// at the end, the donor coordinate itself. Passthrough slots ride every
// activation shifted into positive range, which the next affine undoes.

struct SlotState {
  Vec shift;      // current additive shift per slot (0 where none)
  Vec true_lo, true_hi;  // range of the carried quantity, shift excluded
};

NarrowNet build_hinge_net(const SplitStep& st, const BoxDomain& dom, double alpha,
                          const PlFit& pl, int jj, int q) {
  const int N = dom.dim();
  const int K = static_cast<int>(pl.t.size());
  const double margin = 1.0;
  auto sig = [alpha](double z) { return z >= 0.0 ? z : alpha * z; };

  double s_lo, s_hi;
  feature_range(st.w, st.b, dom, &s_lo, &s_hi);

  // ranges of the j accumulator: x_j + u + v s + partial hinge sums
  double aff_lo = pl.u + std::min(pl.v * s_lo, pl.v * s_hi);
  double aff_hi = pl.u + std::max(pl.v * s_lo, pl.v * s_hi);
  std::vector<double> jlo(K + 1), jhi(K + 1);
  jlo[0] = dom.lo[jj] + aff_lo;
  jhi[0] = dom.hi[jj] + aff_hi;
  for (int l = 0; l < K; ++l) {
    double h0 = sig(s_lo - pl.t[l]), h1 = sig(s_hi - pl.t[l]);
    double g0 = std::min(pl.gamma[l] * h0, pl.gamma[l] * h1);
    double g1 = std::max(pl.gamma[l] * h0, pl.gamma[l] * h1);
    jlo[l + 1] = jlo[l] + g0;
    jhi[l + 1] = jhi[l] + g1;
  }

  std::vector<Layer> layers;
  SlotState cur;
  cur.shift.assign(N, 0.0);
  cur.true_lo.assign(N, 0.0);
  cur.true_hi.assign(N, 0.0);
  for (int mcoord = 0; mcoord < N; ++mcoord) {
    cur.true_lo[mcoord] = dom.lo[mcoord];
    cur.true_hi[mcoord] = dom.hi[mcoord];
  }

  auto passthrough_rows = [&](Mat* W, Vec* b, double new_true_lo_j) {
    // shifts every slot except q into positive range; jj may have a new range
    for (int mcoord = 0; mcoord < N; ++mcoord) {
      if (mcoord == q) continue;
      double lo = mcoord == jj ? new_true_lo_j : cur.true_lo[mcoord];
      double ns = margin - lo;
      (*W)(mcoord, mcoord) = 1.0;
      (*b)[mcoord] = ns - cur.shift[mcoord];
      cur.shift[mcoord] = ns;
    }
  };

  // A_1: kink argument s - t_1 in slot q, affine part of delta folded into j
  {
    Mat W(N, N);
    Vec b(N, 0.0);
    passthrough_rows(&W, &b, jlo[0]);
    // j also picks up u + v s (v w has no jj component: w[jj] == 0)
    for (int mcoord = 0; mcoord < N; ++mcoord) W(jj, mcoord) += pl.v * st.w[mcoord];
    b[jj] += pl.u + pl.v * st.b;
    for (int mcoord = 0; mcoord < N; ++mcoord) W(q, mcoord) = st.w[mcoord];
    b[q] = st.b - pl.t[0];
    cur.true_lo[jj] = jlo[0];
    cur.true_hi[jj] = jhi[0];
    layers.push_back({AffineMap(std::move(W), std::move(b)), true});
  }

  for (int l = 0; l < K; ++l) {
    // B_l: accumulate gamma_l h_l into j, flip the kink for the restore
    {
      Mat W(N, N);
      Vec b(N, 0.0);
      passthrough_rows(&W, &b, jlo[l + 1]);
      W(jj, q) = pl.gamma[l];
      W(q, q) = -1.0;
      b[q] = 0.0;
      cur.true_lo[jj] = jlo[l + 1];
      cur.true_hi[jj] = jhi[l + 1];
      layers.push_back({AffineMap(std::move(W), std::move(b)), true});
    }
    if (l + 1 < K) {
      // A_{l+1}: r_l = -alpha (s - t_l), so -r_l/alpha + (t_l - t_{l+1})
      // is the next kink argument
      Mat W(N, N);
      Vec b(N, 0.0);
      passthrough_rows(&W, &b, cur.true_lo[jj]);
      W(q, q) = -1.0 / alpha;
      b[q] = pl.t[l] - pl.t[l + 1];
      layers.push_back({AffineMap(std::move(W), std::move(b)), true});
    }
  }

  // final affine: drop shifts, rebuild the donor from r_K = -alpha (s - t_K)
  {
    Mat W(N, N);
    Vec b(N, 0.0);
    for (int mcoord = 0; mcoord < N; ++mcoord) {
      if (mcoord == q) continue;
      W(mcoord, mcoord) = 1.0;
      b[mcoord] = -cur.shift[mcoord];
    }
    double wq = st.w[q];
    W(q, q) = -1.0 / (alpha * wq);
    b[q] = (pl.t[K - 1] - st.b) / wq;
    for (int mcoord = 0; mcoord < N; ++mcoord) {
      if (mcoord == q || mcoord == jj) continue;
      W(q, mcoord) = -st.w[mcoord] / wq;
      b[q] += st.w[mcoord] * cur.shift[mcoord] / wq;
    }
    layers.push_back({AffineMap(std::move(W), std::move(b)), false});
  }

  return NarrowNet(N, N, N, alpha, std::move(layers));
}

// ---- free-form fallback -------------------------------------------------

NarrowNet unpack_free(const Vec& th, int N, int depth, double alpha) {
  std::vector<Layer> layers;
  int at = 0;
  for (int l = 0; l <= depth; ++l) {
    Mat W(N, N);
    Vec b(N, 0.0);
    for (int r = 0; r < N; ++r)
      for (int c = 0; c < N; ++c) W(r, c) = th[at++];
    for (int r = 0; r < N; ++r) b[r] = th[at++];
    layers.push_back({AffineMap(std::move(W), std::move(b)), l < depth});
  }
  return NarrowNet(N, N, N, alpha, std::move(layers));
}

Vec pack_free(const NarrowNet& net) {
  Vec th;
  for (const Layer& l : net.layers) {
    for (double v : l.map.W.a) th.push_back(v);
    for (double v : l.map.b) th.push_back(v);
  }
  return th;
}

Vec identity_start(const BoxDomain& dom, int depth, double noise, Rng* rng) {
  const int N = dom.dim();
  double reach = 1.0;
  for (int j = 0; j < N; ++j) reach = std::max(reach, std::max(std::abs(dom.lo[j]), std::abs(dom.hi[j])));
  double c = reach + 1.0;
  Vec th;
  for (int l = 0; l <= depth; ++l) {
    for (int r = 0; r < N; ++r)
      for (int ccol = 0; ccol < N; ++ccol) {
        double v = r == ccol ? 1.0 : 0.0;
        th.push_back(v + noise * rng->uniform(-1.0, 1.0));
      }
    for (int r = 0; r < N; ++r) {
      double b = l == 0 ? c : (l == depth ? -c : 0.0);
      th.push_back(b + noise * rng->uniform(-1.0, 1.0));
    }
  }
  return th;
}

// Identity plus the affine chord of the displacement, assembled from
// cancelled kink pairs: sigma(-sigma(z)) = -alpha z exactly, so each pair
// restores its slot while both activations cross zero inside the domain.
// Starts whose kinks already live in-domain give the polish real derivatives;
// a shifted identity sits on a flat region until a kink reaches the box.
// axis_kinks false places the pairs along the feature direction instead.
Vec structured_start(const SplitStep& st, const BoxDomain& dom, double alpha, int depth,
                     bool axis_kinks, double chord_u, double chord_v, Rng* rng) {
  const int N = dom.dim();
  const int jj = st.j - 1;
  int kslot = jj;
  if (!axis_kinks) {
    double wq = 0.0;
    for (int m = 0; m < N; ++m)
      if (m != jj && std::abs(st.w[m]) > wq) {
        wq = std::abs(st.w[m]);
        kslot = m;
      }
    if (wq <= 1e-9) kslot = jj;
  }
  double s_lo, s_hi;
  feature_range(st.w, st.b, dom, &s_lo, &s_hi);

  auto carried_lo = [&](int m) { return (!axis_kinks && m == kslot) ? s_lo : dom.lo[m]; };
  auto carried_hi = [&](int m) { return (!axis_kinks && m == kslot) ? s_hi : dom.hi[m]; };
  auto kinked = [&](int m) { return axis_kinks || m == kslot; };

  const int pairs = depth / 2;
  const bool odd = depth % 2 != 0;

  // per-slot linear state between kinks: slot = p * carried + r
  Vec p(N, 1.0), r(N, 0.0);
  Vec shift(N, 0.0);
  for (int m = 0; m < N; ++m)
    shift[m] = 1.0 + std::max(std::abs(carried_lo(m)), std::abs(carried_hi(m)));

  auto kink_at = [&](int m, int i) {
    double lo = carried_lo(m), hi = carried_hi(m);
    double frac = (i + 0.5 + 0.35 * rng->uniform(-1.0, 1.0)) / std::max(pairs, 1);
    return lo + (hi - lo) * std::min(0.95, std::max(0.05, frac));
  };

  std::vector<Layer> layers;
  Vec t_cur(N, 0.0);
  bool first = true;
  // writes coef * carried_m into row m, reading the previous layer's slots
  // (or the raw input while no layer exists yet)
  auto carried_row = [&](int m, Mat* W, Vec* b, double coef) {
    if (first) {
      if (!axis_kinks && m == kslot) {
        for (int c = 0; c < N; ++c) (*W)(m, c) += coef * st.w[c];
        (*b)[m] += coef * st.b;
      } else {
        (*W)(m, m) += coef;
      }
    } else {
      (*W)(m, m) += coef / p[m];
      (*b)[m] += -coef * r[m] / p[m];
    }
  };

  if (odd && depth >= 1) {
    Mat W(N, N);
    Vec b(N, 0.0);
    for (int m = 0; m < N; ++m) {
      carried_row(m, &W, &b, 1.0);
      b[m] += shift[m];
    }
    layers.push_back({AffineMap(std::move(W), std::move(b)), true});
    for (int m = 0; m < N; ++m) {
      p[m] = 1.0;
      r[m] = shift[m];
    }
    first = false;
  }

  for (int i = 0; i < pairs; ++i) {
    Mat Wa(N, N);
    Vec ba(N, 0.0);
    for (int m = 0; m < N; ++m) {
      if (kinked(m)) {
        carried_row(m, &Wa, &ba, 1.0);
        t_cur[m] = kink_at(m, i);
        ba[m] += -t_cur[m];
      } else if (first) {
        carried_row(m, &Wa, &ba, 1.0);
        ba[m] += shift[m];
      } else {
        Wa(m, m) = 1.0;  // rider already sits at carried + shift > 0
      }
    }
    layers.push_back({AffineMap(std::move(Wa), std::move(ba)), true});
    for (int m = 0; m < N; ++m)
      if (!kinked(m) && first) {
        p[m] = 1.0;
        r[m] = shift[m];
      }
    first = false;

    Mat Wb(N, N);
    Vec bb(N, 0.0);
    for (int m = 0; m < N; ++m) Wb(m, m) = kinked(m) ? -1.0 : 1.0;
    layers.push_back({AffineMap(std::move(Wb), std::move(bb)), true});
    for (int m = 0; m < N; ++m)
      if (kinked(m)) {
        p[m] = -alpha;
        r[m] = alpha * t_cur[m];
      }
  }

  // final affine: rebuild every coordinate, then add the chord to row jj
  std::vector<Vec> xrow(N, Vec(N, 0.0));
  Vec xconst(N, 0.0);
  Vec srow(N, 0.0);
  double sconst = 0.0;
  if (first) {
    for (int m = 0; m < N; ++m) xrow[m][m] = 1.0;
    srow = st.w;
    sconst = st.b;
  } else if (!axis_kinks) {
    for (int m = 0; m < N; ++m) {
      if (m == kslot) continue;
      xrow[m][m] = 1.0 / p[m];
      xconst[m] = -r[m] / p[m];
    }
    srow[kslot] = 1.0 / p[kslot];
    sconst = -r[kslot] / p[kslot];
    double wk = st.w[kslot];
    for (int c = 0; c < N; ++c) xrow[kslot][c] = srow[c] / wk;
    xconst[kslot] = (sconst - st.b) / wk;
    for (int m = 0; m < N; ++m) {
      if (m == kslot) continue;
      for (int c = 0; c < N; ++c) xrow[kslot][c] -= st.w[m] * xrow[m][c] / wk;
      xconst[kslot] -= st.w[m] * xconst[m] / wk;
    }
  } else {
    for (int m = 0; m < N; ++m) {
      xrow[m][m] = 1.0 / p[m];
      xconst[m] = -r[m] / p[m];
    }
    for (int m = 0; m < N; ++m) {
      for (int c = 0; c < N; ++c) srow[c] += st.w[m] * xrow[m][c];
      sconst += st.w[m] * xconst[m];
    }
    sconst += st.b;
  }
  Mat Wf(N, N);
  Vec bf(N, 0.0);
  for (int m = 0; m < N; ++m) {
    for (int c = 0; c < N; ++c) Wf(m, c) = xrow[m][c];
    bf[m] = xconst[m];
  }
  for (int c = 0; c < N; ++c) Wf(jj, c) += chord_v * srow[c];
  bf[jj] += chord_u + chord_v * sconst;
  layers.push_back({AffineMap(std::move(Wf), std::move(bf)), false});
  return pack_free(NarrowNet(N, N, N, alpha, std::move(layers)));
}

// For a step that reads its own coordinate the target factors through the
// feature alone: y_j = F(s) - sum_{m != j} (w_m / w_j) x_m - b / w_j with
// F(s) = s / w_j + g(s), monotone whenever the displacement slope stays
// below 1/|w_j|. One slot then carries a monotone kink chain approximating
// F while every other slot rides shifted into positive range. Each chain
// kink multiplies the running slope by alpha exactly once, so the chain is
// laid out along the quantized log-slope profile round(log_alpha |F'|).
NarrowNet monotone_chain_net(const SplitStep& st, const BoxDomain& dom, double alpha,
                             int depth, double* design_err, Rng* rng) {
  const int N = dom.dim();
  const int jj = st.j - 1;
  const double wj = st.w[jj];
  const double amp = st.dt * st.a;
  double s_lo, s_hi;
  feature_range(st.w, st.b, dom, &s_lo, &s_hi);
  if (s_hi - s_lo < 1e-9 || depth < 1) return NarrowNet();

  const int m = 1025;
  Vec ss = linspace(s_lo, s_hi, m);
  Vec F(m), Fp(m);
  double ap_lo = std::numeric_limits<double>::infinity(), ap_hi = 0.0;
  for (int i = 0; i < m; ++i) {
    double th = std::tanh(ss[i]);
    F[i] = ss[i] / wj + amp * th;
    Fp[i] = 1.0 / wj + amp * (1.0 - th * th);
    ap_lo = std::min(ap_lo, Fp[i]);
    ap_hi = std::max(ap_hi, Fp[i]);
  }
  if (ap_lo <= 0.0 && ap_hi >= 0.0) return NarrowNet();  // F not monotone
  double B = std::max(std::abs(ap_lo), std::abs(ap_hi));

  // integer level profile, capped until its crossings fit the depth
  std::vector<int> prof(m, 0);
  int mcap = depth;
  int crossings = 0;
  for (;;) {
    crossings = 0;
    for (int i = 0; i < m; ++i) {
      int lev = static_cast<int>(std::lround(std::log(std::abs(Fp[i]) / B) / std::log(alpha)));
      prof[i] = std::max(0, std::min(mcap, lev));
    }
    for (int i = 1; i < m; ++i) crossings += std::abs(prof[i] - prof[i - 1]);
    if (crossings <= depth || mcap == 0) break;
    --mcap;
  }

  struct Kink {
    double x = 0.0;
    int dir = 0;  // +1: level rises to the right (slope shrinks)
  };
  std::vector<Kink> kinks;
  for (int i = 1; i < m; ++i) {
    int d = prof[i] - prof[i - 1];
    int sgn = d > 0 ? 1 : -1;
    for (int rep = 0; rep < std::abs(d); ++rep) {
      double x = 0.5 * (ss[i - 1] + ss[i]);
      if (rng) x += 0.02 * (ss[i] - ss[i - 1]) * rng->uniform(-1.0, 1.0);
      kinks.push_back({x, sgn});
    }
  }
  if (static_cast<int>(kinks.size()) > depth) kinks.resize(depth);

  int leftover = depth - static_cast<int>(kinks.size());
  // fill the spare layers with cancelled pairs the polish can bend later
  int pairs = leftover / 2;
  const bool odd_fill = leftover % 2 != 0;

  Vec shift(N, 0.0);
  for (int mc = 0; mc < N; ++mc)
    shift[mc] = 1.0 + std::max(std::abs(dom.lo[mc]), std::abs(dom.hi[mc]));

  Vec z = ss;  // the chain slot's value as a function of s, updated per layer
  std::vector<Layer> layers;
  bool first = true;
  auto interp_z = [&](double x) {
    double u = (x - s_lo) / (s_hi - s_lo) * (m - 1);
    int i0 = std::max(0, std::min(m - 2, static_cast<int>(u)));
    double fr = u - i0;
    return z[i0] * (1.0 - fr) + z[i0 + 1] * fr;
  };
  auto push_layer = [&](double c, double e, bool activated) {
    Mat W(N, N);
    Vec b(N, 0.0);
    for (int mc = 0; mc < N; ++mc) {
      if (mc == jj) continue;
      if (first) {
        W(mc, mc) = 1.0;
        b[mc] = shift[mc];
      } else {
        W(mc, mc) = 1.0;
      }
    }
    if (first) {
      for (int col = 0; col < N; ++col) W(jj, col) = c * st.w[col];
      b[jj] = c * st.b + e;
    } else {
      W(jj, jj) = c;
      b[jj] = e;
    }
    layers.push_back({AffineMap(std::move(W), std::move(b)), activated});
    for (int i = 0; i < m; ++i) z[i] = leaky_relu(c * z[i] + e, alpha);
    first = false;
  };

  auto orient = [&]() { return z[m - 1] >= z[0] ? 1.0 : -1.0; };

  for (const Kink& k : kinks) {
    double c = -static_cast<double>(k.dir) * orient();
    push_layer(c, -c * interp_z(k.x), true);
  }
  for (int pi = 0; pi < pairs; ++pi) {
    double frac = (pi + 0.5) / pairs;
    if (rng) frac = std::min(0.95, std::max(0.05, frac + 0.1 * rng->uniform(-1.0, 1.0)));
    double X = s_lo + (s_hi - s_lo) * frac;
    double c = orient();
    push_layer(c, -c * interp_z(X), true);
    push_layer(-1.0, 0.0, true);
  }
  if (odd_fill) {
    double zmax = 1.0;
    for (double v : z) zmax = std::max(zmax, std::abs(v));
    push_layer(1.0, zmax + 1.0, true);
  }

  // minimax affine read-out of the chain against F
  double u0 = 0.0, v0 = 0.0;
  Vec gam;
  Vec empty_t;
  double sup = lawson_solve(z, F, empty_t, alpha, 24, &u0, &v0, &gam);
  if (design_err) *design_err = sup;

  Mat W(N, N);
  Vec b(N, 0.0);
  for (int mc = 0; mc < N; ++mc) {
    if (mc == jj) continue;
    W(mc, mc) = 1.0;
    b[mc] = -shift[mc];
  }
  W(jj, jj) = v0;
  b[jj] = u0 - st.b / wj;
  for (int mc = 0; mc < N; ++mc) {
    if (mc == jj) continue;
    W(jj, mc) = -st.w[mc] / wj;
    b[jj] += st.w[mc] * shift[mc] / wj;
  }
  layers.push_back({AffineMap(std::move(W), std::move(b)), false});
  return NarrowNet(N, N, N, alpha, std::move(layers));
}

struct FreeFit {
  Vec theta;
  double cost = std::numeric_limits<double>::infinity();
};

FreeFit lm_polish(const std::function<Vec(const Vec&)>& residuals, Vec theta, int budget) {
  auto cost_of = [](const Vec& r) {
    double s = 0.0;
    for (double v : r) s += v * v;
    return s;
  };
  const int P = static_cast<int>(theta.size());
  Vec r = residuals(theta);
  double cost = cost_of(r);
  double lambda = 1e-3;
  int stagnant = 0;
  for (int iter = 0; iter < budget; ++iter) {
    int R = static_cast<int>(r.size());
    Mat J(R, P);
    for (int p = 0; p < P; ++p) {
      double h = 1e-6 * (1.0 + std::abs(theta[p]));
      Vec th = theta;
      th[p] += h;
      Vec rp = residuals(th);
      for (int i = 0; i < R; ++i) J(i, p) = (rp[i] - r[i]) / h;
    }
    Mat JtJ(P, P);
    Vec Jtr(P, 0.0);
    for (int i = 0; i < R; ++i)
      for (int p = 0; p < P; ++p) Jtr[p] += J(i, p) * r[i];
    for (int p = 0; p < P; ++p)
      for (int qi = p; qi < P; ++qi) {
        double s = 0.0;
        for (int i = 0; i < R; ++i) s += J(i, p) * J(i, qi);
        JtJ(p, qi) = s;
        JtJ(qi, p) = s;
      }
    bool accepted = false;
    for (int tries = 0; tries < 8 && !accepted; ++tries) {
      Mat A = JtJ;
      for (int p = 0; p < P; ++p) A(p, p) += lambda * (JtJ(p, p) + 1e-12);
      Vec step;
      try {
        step = lu_solve(A, Jtr);
      } catch (const NonInvertibleError&) {
        lambda *= 10.0;
        continue;
      }
      Vec th = theta;
      for (int p = 0; p < P; ++p) th[p] -= step[p];
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
    if (!accepted || stagnant >= 4 || cost < 1e-26) break;
  }
  return {std::move(theta), cost};
}

double grid_sup(const NarrowNet& net, const SplitStep& st, const std::vector<Vec>& pts) {
  double sup = 0.0;
  for (const Vec& x : pts) {
    Vec y = eval_net(net, x);
    Vec want = apply_step(st, x);
    sup = std::max(sup, norm_inf(vsub(y, want)));
  }
  return sup;
}

NarrowNet identity_block(int N, double alpha) {
  std::vector<Layer> ls;
  ls.push_back({AffineMap(Mat::identity(N), Vec(N, 0.0)), false});
  return NarrowNet(N, N, N, alpha, std::move(ls));
}

}  // namespace

// ---- schedule -----------------------------------------------------------

SplitSchedule make_schedule(const PiecewiseConstantField& f, int n) {
  validate_field(f);
  const int ivs = static_cast<int>(f.intervals.size());
  if (n < 1 || n % ivs != 0)
    throw StructureError("schedule step count must be a positive multiple of the interval count");
  const int M = static_cast<int>(f.intervals.front().terms.size());
  for (const FieldInterval& iv : f.intervals)
    if (static_cast<int>(iv.terms.size()) != M)
      throw StructureError("schedule needs the same number of terms in every interval");

  SplitSchedule sch;
  sch.n = n;
  sch.M = M;
  sch.N = f.dim;
  sch.tau = f.tau;
  const double dt = f.tau / n;
  sch.steps.reserve(static_cast<size_t>(n) * M * f.dim);
  for (int k = 1; k <= n; ++k) {
    const FieldInterval& iv = interval_at(f, (k - 1) * dt);
    for (int i = 1; i <= M; ++i) {
      const FieldTerm& term = iv.terms[i - 1];
      for (int j = 1; j <= f.dim; ++j) {
        SplitStep st;
        st.k = k;
        st.i = i;
        st.j = j;
        st.dt = dt;
        st.a = term.a[j - 1];
        st.w = term.w;
        st.b = term.b;
        sch.steps.push_back(std::move(st));
      }
    }
  }
  return sch;
}

Vec apply_step(const SplitStep& s, const Vec& x) {
  if (s.w.size() != x.size() || s.j < 1 || s.j > static_cast<int>(x.size()))
    throw PreconditionViolated("split step dimension mismatch");
  Vec y = x;
  y[s.j - 1] += s.dt * s.a * std::tanh(dot(s.w, x) + s.b);
  return y;
}

Vec apply_schedule(const SplitSchedule& s, const Vec& x) {
  Vec y = x;
  for (const SplitStep& st : s.steps) y = apply_step(st, y);
  return y;
}

double schedule_flow_gap(const SplitSchedule& s, const PiecewiseConstantField& f,
                         const BoxDomain& dom, int steps_per_interval) {
  if (dom.dim() != f.dim) throw PreconditionViolated("domain dimension does not match the field");
  double sup = 0.0;
  for (const Vec& x : box_grid(dom, grid_axis_points(f.dim))) {
    Vec a = apply_schedule(s, x);
    Vec b = integrate(f, x, steps_per_interval).z;
    sup = std::max(sup, norm_inf(vsub(a, b)));
  }
  return sup;
}

NPlan choose_n(const PiecewiseConstantField& f, const BoxDomain& dom, double disc_budget,
               int n_max) {
  if (disc_budget <= 0.0) throw PreconditionViolated("discretization budget must be positive");
  const int ivs = static_cast<int>(f.intervals.size());
  NPlan plan;
  for (int n = ivs; n <= n_max; n *= 2) {
    SplitSchedule sch = make_schedule(f, n);
    plan.n = n;
    plan.gap = schedule_flow_gap(sch, f, dom);
    plan.met = plan.gap <= 0.5 * disc_budget;
    if (plan.met) return plan;
  }
  return plan;
}

ErrorBudget plan_budget(double eps) {
  if (eps <= 0.0) throw PreconditionViolated("error budget must be positive");
  return {eps, eps / 3.0, eps / 3.0, eps / 3.0};
}

ErrorBudget plan_budget(double eps, double lift_prop, double flow_prop, double disc_prop) {
  if (eps <= 0.0) throw PreconditionViolated("error budget must be positive");
  if (lift_prop < 0.0 || flow_prop < 0.0 || disc_prop < 0.0 ||
      std::abs(lift_prop + flow_prop + disc_prop - 1.0) > 1e-9)
    throw PreconditionViolated("stage proportions must be nonnegative and sum to one");
  return {eps, eps * lift_prop, eps * flow_prop, eps * disc_prop};
}

// ---- per-step compilation ----------------------------------------------

NarrowNet compile_step(const SplitStep& st, const BoxDomain& dom, double alpha, double tol,
                       int max_depth, std::uint64_t seed) {
  const int N = dom.dim();
  if (static_cast<int>(st.w.size()) != N || st.j < 1 || st.j > N)
    throw PreconditionViolated("split step does not match the domain dimension");
  if (!(alpha > 0.0) || alpha == 1.0) throw PreconditionViolated("activation slope must be positive and not 1");
  if (!(tol > 0.0)) throw PreconditionViolated("tolerance must be positive");
  if (max_depth < 0) throw PreconditionViolated("depth bound must be nonnegative");

  const int jj = st.j - 1;
  const double amp = st.dt * st.a;
  std::vector<Vec> verify = box_grid(dom, grid_axis_points(N));

  if (amp == 0.0) return identity_block(N, alpha);

  double s_lo, s_hi;
  feature_range(st.w, st.b, dom, &s_lo, &s_hi);
  auto g = [amp](double s) { return amp * std::tanh(s); };

  // smallest hinge count whose 1-d fit meets the tolerance
  const int K_max = max_depth / 2;
  PlFit best_pl;
  int K_found = -1;
  for (int K = 0; K <= K_max; ++K) {
    PlFit fit = fit_pl(g, s_lo, s_hi, K, alpha);
    if (fit.sup < best_pl.sup) best_pl = fit;
    if (fit.sup <= 0.999 * tol) {
      K_found = K;
      best_pl = fit;
      break;
    }
  }

  if (K_found == 0) {
    // the affine part alone is enough; exact for any feature direction
    Mat W = Mat::identity(N);
    Vec b(N, 0.0);
    for (int m = 0; m < N; ++m) W(jj, m) += best_pl.v * st.w[m];
    b[jj] = best_pl.u + best_pl.v * st.b;
    std::vector<Layer> ls;
    ls.push_back({AffineMap(std::move(W), std::move(b)), false});
    NarrowNet net(N, N, N, alpha, std::move(ls));
    double sup = grid_sup(net, st, verify);
    if (sup <= tol) return net;
    throw ToleranceUnreachable("affine block missed the tolerance", sup);
  }

  const bool self_free = st.w[jj] == 0.0;
  int q = -1;
  double wq = 0.0;
  for (int m = 0; m < N; ++m) {
    if (m == jj) continue;
    if (std::abs(st.w[m]) > wq) {
      wq = std::abs(st.w[m]);
      q = m;
    }
  }
  const bool has_donor = q >= 0 && wq > 1e-9;

  if (K_found > 0 && self_free && has_donor) {
    NarrowNet net = build_hinge_net(st, dom, alpha, best_pl, jj, q);
    double sup = grid_sup(net, st, verify);
    if (sup <= tol) return net;
    throw ToleranceUnreachable("hinge block missed the tolerance", sup);
  }
  if (self_free) {
    // no usable donor coordinate means the feature is constant, which the
    // K = 0 branch already covers; reaching here means depth ran out
    throw ToleranceUnreachable("piecewise-linear displacement needs more depth", best_pl.sup);
  }

  // the step reads its own coordinate: seeded fit over full layer weights,
  // on a grid denser than the verification grid so the fit cannot ride it
  std::vector<Vec> fitpts = box_grid(dom, N <= 2 ? 11 : (N == 3 ? 4 : 3));
  auto residuals_for = [&](int depth) {
    return [&, depth](const Vec& th) -> Vec {
      NarrowNet net = unpack_free(th, N, depth, alpha);
      Vec r;
      r.reserve(fitpts.size() * N);
      for (const Vec& x : fitpts) {
        Vec y = eval_net(net, x);
        Vec want = apply_step(st, x);
        for (int c = 0; c < N; ++c) r.push_back(y[c] - want[c]);
      }
      return r;
    };
  };

  Rng rng(seed);
  double best_sup = std::numeric_limits<double>::infinity();
  NarrowNet best_net;
  std::vector<int> ladder;
  for (int d : {4, 8, max_depth})
    if (d <= max_depth && (ladder.empty() || d > ladder.back())) ladder.push_back(d);

  double chord_u = 0.0, chord_v = 0.0;
  {
    PlFit chord = fit_pl(g, s_lo, s_hi, 0, alpha);
    chord_u = chord.u;
    chord_v = chord.v;
  }

  // the quantized-slope chain alone sometimes already meets the tolerance
  {
    NarrowNet chain = monotone_chain_net(st, dom, alpha, max_depth, nullptr, nullptr);
    if (!chain.layers.empty()) {
      double sup = grid_sup(chain, st, verify);
      if (sup <= tol) return chain;
      if (sup < best_sup) {
        best_sup = sup;
        best_net = chain;
      }
    }
  }

  for (int depth : ladder) {
    std::vector<Vec> starts;
    {
      NarrowNet chain = monotone_chain_net(st, dom, alpha, depth, nullptr, &rng);
      if (!chain.layers.empty()) starts.push_back(pack_free(chain));
    }
    starts.push_back(structured_start(st, dom, alpha, depth, false, chord_u, chord_v, &rng));
    starts.push_back(structured_start(st, dom, alpha, depth, true, chord_u, chord_v, &rng));
    if (has_donor && depth >= 2) {
      // hinge chain built as if the self reference were absent
      SplitStep frozen = st;
      frozen.w[jj] = 0.0;
      double f_lo, f_hi;
      feature_range(frozen.w, frozen.b, dom, &f_lo, &f_hi);
      int Kd = depth / 2;
      PlFit fit = fit_pl(g, f_lo, f_hi, Kd, alpha);
      if (!fit.t.empty()) {
        NarrowNet warm = build_hinge_net(frozen, dom, alpha, fit, jj, q);
        Vec th = pack_free(warm);
        if (static_cast<int>(warm.depth_activated()) == depth) starts.push_back(std::move(th));
      }
    }
    starts.push_back(identity_start(dom, depth, 0.02, &rng));

    for (Vec& th : starts) {
      FreeFit ff = lm_polish(residuals_for(depth), std::move(th), 150);
      NarrowNet net = unpack_free(ff.theta, N, depth, alpha);
      double sup = grid_sup(net, st, verify);
      if (sup < best_sup) {
        best_sup = sup;
        best_net = std::move(net);
      }
      if (best_sup <= tol) return best_net;
    }
  }

  // one longer polish of the overall winner
  {
    int depth = static_cast<int>(best_net.depth_activated());
    FreeFit ff = lm_polish(residuals_for(depth), pack_free(best_net), 300);
    NarrowNet net = unpack_free(ff.theta, N, depth, alpha);
    double sup = grid_sup(net, st, verify);
    if (sup < best_sup) {
      best_sup = sup;
      best_net = std::move(net);
    }
    if (best_sup <= tol) return best_net;
  }
  throw ToleranceUnreachable("fit block missed the tolerance", best_sup);
}

// ---- assembly -----------------------------------------------------------

AssemblyResult assemble(const LiftTriple& lift, const PiecewiseConstantField& field,
                        const std::vector<NarrowNet>& blocks, const ErrorBudget& budget,
                        const VecFn& target, int steps_per_interval) {
  if (!lift.report.accepted) throw PreconditionViolated("assembly needs an accepted lift");
  validate_field(field);
  const int d = lift.domain.dim();
  const int N = d + 1;
  if (field.dim != N) throw StructureError("field dimension does not match the lifted space");
  double alpha = blocks.empty() ? 0.5 : blocks.front().alpha;
  for (const NarrowNet& blk : blocks) {
    if (blk.input_dim != N || blk.output_dim != N || blk.declared_width > N)
      throw PreconditionViolated("block shape does not match the lifted space");
    if (blk.alpha != alpha) throw PreconditionViolated("blocks must share one activation slope");
  }

  std::vector<Layer> chain;
  chain.push_back({lift.alpha_map, false});
  for (const NarrowNet& blk : blocks)
    for (const Layer& l : blk.layers) chain.push_back(l);
  chain.push_back({lift.beta_map, false});

  // merge every affine that is not activated into its successor
  std::vector<Layer> merged;
  for (Layer& l : chain) {
    if (!merged.empty() && !merged.back().activated) {
      const AffineMap& prev = merged.back().map;
      Mat W = matmul(l.map.W, prev.W);
      Vec b = vadd(matvec(l.map.W, prev.b), l.map.b);
      merged.back() = {AffineMap(std::move(W), std::move(b)), l.activated};
    } else {
      merged.push_back(std::move(l));
    }
  }
  NarrowNet net(d, d, N, alpha, std::move(merged));

  AssemblyResult out{std::move(net), 0.0, 0.0, 0.0, 0.0};
  for (const Vec& x : box_grid(lift.domain, grid_axis_points(d))) {
    Vec fx = target(x);
    Vec lx = lift_reproduce(lift, x);
    Vec ax = lift.alpha_map.apply(x);
    Vec fz = integrate(field, ax, steps_per_interval).z;
    Vec fl = lift.beta_map.apply(fz);
    Vec bz = ax;
    for (const NarrowNet& blk : blocks) bz = eval_net(blk, bz);
    Vec bl = lift.beta_map.apply(bz);
    Vec nx = eval_net(out.net, x);
    out.lift_error = std::max(out.lift_error, norm_inf(vsub(lx, fx)));
    out.flow_error = std::max(out.flow_error, norm_inf(vsub(fl, lx)));
    out.disc_error = std::max(out.disc_error, norm_inf(vsub(bl, fl)));
    out.total_error = std::max(out.total_error, norm_inf(vsub(nx, fx)));
  }
  if (out.total_error > budget.total)
    throw BudgetExceeded("assembled net missed the error budget", out.lift_error,
                         out.flow_error, out.disc_error);
  return out;
}

}  // namespace forge
