#include "forge/topology.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

#include <boost/multiprecision/cpp_int.hpp>

#include "forge/errors.hpp"

namespace forge {

namespace {

using Rat = boost::multiprecision::cpp_rational;

int sign_of(const Rat& v) { return v == 0 ? 0 : (v < 0 ? -1 : 1); }

int orient_exact(double px, double py, double qx, double qy, double rx, double ry) {
  Rat vx = Rat(qx) - Rat(px), vy = Rat(qy) - Rat(py);
  Rat wx = Rat(rx) - Rat(px), wy = Rat(ry) - Rat(py);
  return sign_of(vx * wy - vy * wx);
}

// Orientation sign of the triple (p, q, r). Fast double path with an exact
// rational decision when the determinant is too small to trust.
int orient(double px, double py, double qx, double qy, double rx, double ry) {
  double vx = qx - px, vy = qy - py, wx = rx - px, wy = ry - py;
  double det = vx * wy - vy * wx;
  double scale = std::max({std::abs(vx), std::abs(vy), std::abs(wx), std::abs(wy)});
  if (std::abs(det) > 1e-12 * scale * scale) return det > 0.0 ? 1 : -1;
  return orient_exact(px, py, qx, qy, rx, ry);
}

bool in_bbox(double ax, double ay, double bx, double by, double cx, double cy) {
  return std::min(ax, bx) <= cx && cx <= std::max(ax, bx) &&
         std::min(ay, by) <= cy && cy <= std::max(ay, by);
}

struct Crossing {
  bool hit = false;
  bool proper = false;
  double s = 0.0, t = 0.0;  // local parameters on the two segments
};

// Transversal crossing of segments a0-a1 and b0-b1, plus degenerate touches
// (collinear endpoint contact) when allow_touch is set.
Crossing segment_crossing(const Vec& a0, const Vec& a1, const Vec& b0, const Vec& b1,
                          bool allow_touch) {
  Crossing c;
  int o1 = orient(a0[0], a0[1], a1[0], a1[1], b0[0], b0[1]);
  int o2 = orient(a0[0], a0[1], a1[0], a1[1], b1[0], b1[1]);
  int o3 = orient(b0[0], b0[1], b1[0], b1[1], a0[0], a0[1]);
  int o4 = orient(b0[0], b0[1], b1[0], b1[1], a1[0], a1[1]);
  if (o1 * o2 < 0 && o3 * o4 < 0) {
    double dax = a1[0] - a0[0], day = a1[1] - a0[1];
    double dbx = b1[0] - b0[0], dby = b1[1] - b0[1];
    double denom = dax * dby - day * dbx;
    c.hit = c.proper = true;
    c.s = ((b0[0] - a0[0]) * dby - (b0[1] - a0[1]) * dbx) / denom;
    c.t = ((b0[0] - a0[0]) * day - (b0[1] - a0[1]) * dax) / denom;
    c.s = std::clamp(c.s, 0.0, 1.0);
    c.t = std::clamp(c.t, 0.0, 1.0);
    return c;
  }
  if (!allow_touch) return c;
  auto local = [](const Vec& p, const Vec& q, const Vec& r) {
    double dx = q[0] - p[0], dy = q[1] - p[1];
    double len2 = dx * dx + dy * dy;
    if (len2 == 0.0) return 0.0;
    return std::clamp(((r[0] - p[0]) * dx + (r[1] - p[1]) * dy) / len2, 0.0, 1.0);
  };
  if (o1 == 0 && in_bbox(a0[0], a0[1], a1[0], a1[1], b0[0], b0[1])) {
    c.hit = true;
    c.s = local(a0, a1, b0);
    c.t = 0.0;
  } else if (o2 == 0 && in_bbox(a0[0], a0[1], a1[0], a1[1], b1[0], b1[1])) {
    c.hit = true;
    c.s = local(a0, a1, b1);
    c.t = 1.0;
  } else if (o3 == 0 && in_bbox(b0[0], b0[1], b1[0], b1[1], a0[0], a0[1])) {
    c.hit = true;
    c.s = 0.0;
    c.t = local(b0, b1, a0);
  } else if (o4 == 0 && in_bbox(b0[0], b0[1], b1[0], b1[1], a1[0], a1[1])) {
    c.hit = true;
    c.s = 1.0;
    c.t = local(b0, b1, a1);
  }
  return c;
}

// Closest-approach distance between 3-d segments with the local parameters
// of the nearest points.
double segment_distance3(const Vec& a0, const Vec& a1, const Vec& b0, const Vec& b1,
                         double* s_out, double* t_out) {
  Vec d1 = vsub(a1, a0), d2 = vsub(b1, b0), r = vsub(a0, b0);
  double a = 0, e = 0, f = 0, cdot = 0, bdot = 0;
  for (size_t k = 0; k < d1.size(); ++k) {
    a += d1[k] * d1[k];
    e += d2[k] * d2[k];
    f += d2[k] * r[k];
    cdot += d1[k] * r[k];
    bdot += d1[k] * d2[k];
  }
  double s = 0.0, t = 0.0;
  if (a <= 1e-30 && e <= 1e-30) {
    // both degenerate
  } else if (a <= 1e-30) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else if (e <= 1e-30) {
    s = std::clamp(-cdot / a, 0.0, 1.0);
  } else {
    double denom = a * e - bdot * bdot;
    s = denom > 1e-30 ? std::clamp((bdot * f - cdot * e) / denom, 0.0, 1.0) : 0.0;
    t = (bdot * s + f) / e;
    if (t < 0.0) {
      t = 0.0;
      s = std::clamp(-cdot / a, 0.0, 1.0);
    } else if (t > 1.0) {
      t = 1.0;
      s = std::clamp((bdot - cdot) / a, 0.0, 1.0);
    }
  }
  double dist2 = 0.0;
  for (size_t k = 0; k < d1.size(); ++k) {
    double diff = (a0[k] + s * d1[k]) - (b0[k] + t * d2[k]);
    dist2 += diff * diff;
  }
  if (s_out) *s_out = s;
  if (t_out) *t_out = t;
  return std::sqrt(dist2);
}

Vec lerp(const Vec& a, const Vec& b, double s) {
  Vec out(a.size());
  for (size_t k = 0; k < a.size(); ++k) out[k] = a[k] + s * (b[k] - a[k]);
  return out;
}

}  // namespace

Vec Polyline::at(double t) const {
  if (vertices.empty()) throw StructureError("polyline has no vertices");
  if (vertices.size() == 1) return vertices[0];
  t = std::clamp(t, 0.0, 1.0);
  int m = segments();
  double u = t * m;
  int i = std::min(static_cast<int>(std::floor(u)), m - 1);
  return lerp(vertices[i], vertices[i + 1], u - i);
}

Polyline four_curve(int dim, double z_lift) {
  if (dim != 2 && dim != 3) throw PreconditionViolated("four_curve needs dim 2 or 3");
  Polyline c;
  c.dim = dim;
  if (dim == 2) {
    c.vertices = {{-1.0, 0.0}, {1.0, 0.0}, {0.0, -1.0}, {0.0, 1.0}};
  } else {
    c.vertices = {{-1.0, 0.0, z_lift}, {1.0, 0.0, 0.0}, {0.0, -1.0, 0.0}, {0.0, 1.0, 0.0}};
  }
  return c;
}

std::vector<CurveIntersection> self_intersections(const Polyline& c, double tol) {
  if (c.vertices.size() < 2) return {};
  for (const Vec& v : c.vertices)
    if (static_cast<int>(v.size()) != c.dim)
      throw StructureError("polyline vertex dimension mismatch");
  int m = c.segments();
  std::vector<CurveIntersection> out;
  for (int i = 0; i < m; ++i) {
    for (int j = i + 2; j < m; ++j) {
      const Vec &a0 = c.vertices[i], &a1 = c.vertices[i + 1];
      const Vec &b0 = c.vertices[j], &b1 = c.vertices[j + 1];
      CurveIntersection hit;
      if (c.dim == 2) {
        Crossing cr = segment_crossing(a0, a1, b0, b1, false);
        if (!cr.proper) continue;
        hit.t_a = (i + cr.s) / m;
        hit.t_b = (j + cr.t) / m;
        hit.point = lerp(a0, a1, cr.s);
      } else {
        double s = 0, t = 0;
        double d = segment_distance3(a0, a1, b0, b1, &s, &t);
        if (d > tol) continue;
        hit.t_a = (i + s) / m;
        hit.t_b = (j + t) / m;
        Vec pa = lerp(a0, a1, s), pb = lerp(b0, b1, t);
        hit.point = lerp(pa, pb, 0.5);
      }
      hit.seg_a = i;
      hit.seg_b = j;
      out.push_back(hit);
    }
  }
  return out;
}

namespace {

// Sub-chain of h over the parameter range [t0, t1], keeping the global
// parameter of every retained vertex.
struct Strand {
  std::vector<Vec> pts;
  std::vector<double> params;
};

Strand extract_strand(const Polyline& h, double t0, double t1) {
  Strand s;
  int m = h.segments();
  s.pts.push_back(h.at(t0));
  s.params.push_back(t0);
  for (int k = 1; k < m; ++k) {
    double tk = static_cast<double>(k) / m;
    if (tk > t0 + 1e-15 && tk < t1 - 1e-15) {
      s.pts.push_back(h.vertices[k]);
      s.params.push_back(tk);
    }
  }
  s.pts.push_back(h.at(t1));
  s.params.push_back(t1);
  return s;
}

}  // namespace

ForcedCheck forced_intersection_check(const Polyline& h, double eps0) {
  if (h.dim != 2) throw PreconditionViolated("forced intersection check is planar");
  if (h.vertices.size() < 2) throw PreconditionViolated("curve needs at least one segment");
  if (!(eps0 > 0.0 && eps0 < 1.0)) throw PreconditionViolated("eps0 must lie in (0, 1)");
  Polyline g = four_curve(2);

  // Both curves are piecewise linear, so the distance between them at
  // matched parameters attains its sup at a knot of one of the two.
  std::vector<double> knots;
  int m = h.segments();
  for (int k = 0; k <= m; ++k) knots.push_back(static_cast<double>(k) / m);
  for (int k = 0; k <= 3; ++k) knots.push_back(k / 3.0);
  std::sort(knots.begin(), knots.end());
  double sup = 0.0;
  for (double t : knots) sup = std::max(sup, norm2(vsub(h.at(t), g.at(t))));

  ForcedCheck out;
  out.sup_distance = sup;
  if (!(sup < eps0))
    throw PreconditionViolated("curve is not eps0-close to the reference '4'");

  Strand sa = extract_strand(h, 0.0, 1.0 / 3.0);
  Strand sb = extract_strand(h, 2.0 / 3.0, 1.0);
  auto scan = [&](bool allow_touch) -> bool {
    for (size_t i = 0; i + 1 < sa.pts.size(); ++i) {
      for (size_t j = 0; j + 1 < sb.pts.size(); ++j) {
        Crossing cr =
            segment_crossing(sa.pts[i], sa.pts[i + 1], sb.pts[j], sb.pts[j + 1], allow_touch);
        if (!cr.hit) continue;
        out.verdict = ForcedVerdict::Intersects;
        out.t_a = sa.params[i] + cr.s * (sa.params[i + 1] - sa.params[i]);
        out.t_b = sb.params[j] + cr.t * (sb.params[j + 1] - sb.params[j]);
        out.point = lerp(sa.pts[i], sa.pts[i + 1], cr.s);
        return true;
      }
    }
    return false;
  };
  if (!scan(false)) scan(true);
  return out;
}

Width1Probe monotone_width1_probe(const NarrowNet& net) {
  if (net.input_dim != 1 || net.output_dim != 1 || net.declared_width != 1)
    throw PreconditionViolated("probe expects a scalar width-1 net");
  Vec grid = linspace(-1.0, 1.0, 1001);
  Vec vals(grid.size());
  double scale = 1.0;
  for (size_t i = 0; i < grid.size(); ++i) {
    vals[i] = eval_net(net, {grid[i]})[0];
    scale = std::max(scale, std::abs(vals[i]));
  }
  double slack = 1e-12 * scale;
  bool up = false, down = false;
  for (size_t i = 0; i + 1 < vals.size(); ++i) {
    double d = vals[i + 1] - vals[i];
    if (d > slack) up = true;
    if (d < -slack) down = true;
  }
  Width1Probe probe;
  probe.monotone = !(up && down);
  probe.increasing = !down;
  for (size_t i = 0; i < grid.size(); ++i)
    probe.sup_error_vs_square = std::max(probe.sup_error_vs_square,
                                         std::abs(vals[i] - grid[i] * grid[i]));
  return probe;
}

Polyline perturbed_four_curve(double amplitude, std::uint64_t seed, int refine) {
  if (refine < 1) throw PreconditionViolated("refine must be positive");
  Polyline base = four_curve(2);
  Polyline out;
  out.dim = 2;
  for (int seg = 0; seg < base.segments(); ++seg) {
    for (int k = 0; k < refine; ++k) {
      double s = static_cast<double>(k) / refine;
      out.vertices.push_back(lerp(base.vertices[seg], base.vertices[seg + 1], s));
    }
  }
  out.vertices.push_back(base.vertices.back());
  Rng rng(seed);
  for (Vec& v : out.vertices) {
    double theta = 6.283185307179586 * rng.uniform();
    double r = amplitude * std::sqrt(rng.uniform());
    v[0] += r * std::cos(theta);
    v[1] += r * std::sin(theta);
  }
  return out;
}

NarrowNet random_width1_net(int max_depth, Rng& rng) {
  if (max_depth < 1) throw PreconditionViolated("max_depth must be positive");
  int hidden = 1 + rng.uniform_int(max_depth);
  double alpha = rng.uniform(0.05, 0.95);
  std::vector<Layer> layers;
  for (int k = 0; k < hidden; ++k) {
    Mat wk(1, 1);
    wk.a[0] = rng.uniform(-3.0, 3.0);
    layers.push_back({AffineMap{wk, {rng.uniform(-3.0, 3.0)}}, true});
  }
  Mat w(1, 1);
  w.a[0] = rng.uniform(-3.0, 3.0);
  layers.push_back({AffineMap{w, {rng.uniform(-3.0, 3.0)}}, false});
  return NarrowNet{1, 1, 1, alpha, std::move(layers)};
}

double best_width1_error(int iterations, int max_depth, std::uint64_t seed) {
  Rng rng(seed);
  double best = std::numeric_limits<double>::infinity();
  for (int it = 0; it < iterations; ++it) {
    NarrowNet net = random_width1_net(max_depth, rng);
    best = std::min(best, monotone_width1_probe(net).sup_error_vs_square);
  }
  return best;
}

}  // namespace forge
