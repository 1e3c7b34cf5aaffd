#include "forge/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"

#include "forge/errors.hpp"

namespace forge {

using nlohmann::ordered_json;

void validate_field(const PiecewiseConstantField& f) {
  if (f.dim < 1) throw StructureError("field dimension must be positive");
  if (!(f.tau > 0.0)) throw StructureError("field horizon must be positive");
  if (f.intervals.empty()) throw StructureError("field needs at least one interval");
  if (f.intervals.front().t0 != 0.0) throw StructureError("first interval must start at 0");
  if (f.intervals.back().t1 != f.tau) throw StructureError("last interval must end at tau");
  for (size_t k = 0; k < f.intervals.size(); ++k) {
    const FieldInterval& iv = f.intervals[k];
    if (!(iv.t0 < iv.t1)) throw StructureError("interval endpoints out of order");
    if (k > 0 && f.intervals[k - 1].t1 != iv.t0)
      throw StructureError("intervals do not partition [0, tau]");
    for (const FieldTerm& term : iv.terms) {
      if (static_cast<int>(term.a.size()) != f.dim ||
          static_cast<int>(term.w.size()) != f.dim)
        throw StructureError("term coefficient dimension mismatch");
      for (double v : term.a)
        if (!std::isfinite(v)) throw StructureError("non-finite term coefficient");
      for (double v : term.w)
        if (!std::isfinite(v)) throw StructureError("non-finite term coefficient");
      if (!std::isfinite(term.b)) throw StructureError("non-finite term coefficient");
    }
  }
}

const FieldInterval& interval_at(const PiecewiseConstantField& f, double t) {
  for (const FieldInterval& iv : f.intervals)
    if (t < iv.t1) return iv;
  return f.intervals.back();
}

Vec field_velocity(const FieldInterval& iv, const Vec& x) {
  Vec v(x.size(), 0.0);
  for (const FieldTerm& term : iv.terms) {
    double arg = term.b;
    for (size_t c = 0; c < x.size(); ++c) arg += term.w[c] * x[c];
    double t = std::tanh(arg);
    for (size_t c = 0; c < x.size(); ++c) v[c] += term.a[c] * t;
  }
  return v;
}

namespace {

// one classical 4th-order step of the autonomous field of one interval
Vec rk4_step(const FieldInterval& iv, const Vec& x, double h) {
  Vec k1 = field_velocity(iv, x);
  Vec x2(x.size()), x3(x.size()), x4(x.size());
  for (size_t c = 0; c < x.size(); ++c) x2[c] = x[c] + 0.5 * h * k1[c];
  Vec k2 = field_velocity(iv, x2);
  for (size_t c = 0; c < x.size(); ++c) x3[c] = x[c] + 0.5 * h * k2[c];
  Vec k3 = field_velocity(iv, x3);
  for (size_t c = 0; c < x.size(); ++c) x4[c] = x[c] + h * k3[c];
  Vec k4 = field_velocity(iv, x4);
  Vec out(x.size());
  for (size_t c = 0; c < x.size(); ++c)
    out[c] = x[c] + h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
  return out;
}

void check_finite(const Vec& x, double t) {
  for (double v : x) {
    if (!std::isfinite(v)) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "field blow-up near t=%.6g", t);
      throw EvalDomainError(buf);
    }
  }
}

PiecewiseConstantField reversed_negated(const PiecewiseConstantField& f) {
  PiecewiseConstantField r;
  r.dim = f.dim;
  r.tau = f.tau;
  for (auto it = f.intervals.rbegin(); it != f.intervals.rend(); ++it) {
    FieldInterval iv;
    iv.t0 = f.tau - it->t1;
    iv.t1 = f.tau - it->t0;
    iv.terms = it->terms;
    for (FieldTerm& term : iv.terms)
      for (double& v : term.a) v = -v;
    r.intervals.push_back(std::move(iv));
  }
  return r;
}

}  // namespace

FlowResult integrate(const PiecewiseConstantField& f, const Vec& x0,
                     int steps_per_interval) {
  validate_field(f);
  if (steps_per_interval < 1) throw PreconditionViolated("steps_per_interval must be >= 1");
  if (static_cast<int>(x0.size()) != f.dim)
    throw PreconditionViolated("initial state dimension mismatch");
  FlowResult res;
  res.z = x0;
  for (const FieldInterval& iv : f.intervals) {
    double h = (iv.t1 - iv.t0) / steps_per_interval;
    for (int s = 0; s < steps_per_interval; ++s) {
      res.z = rk4_step(iv, res.z, h);
      ++res.steps;
      check_finite(res.z, iv.t0 + (s + 1) * h);
    }
  }
  // coarse error estimate: Richardson on the very first step
  {
    const FieldInterval& iv = f.intervals.front();
    double h = (iv.t1 - iv.t0) / steps_per_interval;
    Vec full = rk4_step(iv, x0, h);
    Vec half = rk4_step(iv, rk4_step(iv, x0, 0.5 * h), 0.5 * h);
    res.est_error = norm_inf(vsub(full, half)) * static_cast<double>(res.steps);
  }
  return res;
}

Vec inverse_flow(const PiecewiseConstantField& f, const Vec& y, int steps_per_interval) {
  return integrate(reversed_negated(f), y, steps_per_interval).z;
}

// ---- fitting ------------------------------------------------------------

namespace {

struct ParamLayout {
  FieldStructure structure;
  int dim, M, intervals, driven;
  int per_term;  // packed parameter count per term

  int total() const { return intervals * M * per_term; }
};

ParamLayout make_layout(FieldStructure structure, int dim, int M, int intervals,
                        int driven) {
  ParamLayout lay;
  lay.structure = structure;
  lay.dim = dim;
  lay.M = M;
  lay.intervals = intervals;
  lay.driven = driven;
  // SelfFree: one amplitude, weights on the other coordinates, one bias.
  // Generic: full a and w vectors plus the bias.
  lay.per_term = structure == FieldStructure::SelfFree ? 1 + (dim - 1) + 1 : 2 * dim + 1;
  return lay;
}

PiecewiseConstantField unpack(const ParamLayout& lay, const Vec& theta) {
  PiecewiseConstantField f;
  f.dim = lay.dim;
  f.tau = 1.0;
  int p = 0;
  for (int iv = 0; iv < lay.intervals; ++iv) {
    FieldInterval interval;
    interval.t0 = static_cast<double>(iv) / lay.intervals;
    interval.t1 = static_cast<double>(iv + 1) / lay.intervals;
    for (int m = 0; m < lay.M; ++m) {
      FieldTerm term;
      term.a.assign(lay.dim, 0.0);
      term.w.assign(lay.dim, 0.0);
      if (lay.structure == FieldStructure::SelfFree) {
        term.a[lay.driven] = theta[p++];
        for (int c = 0; c < lay.dim; ++c)
          if (c != lay.driven) term.w[c] = theta[p++];
        term.b = theta[p++];
      } else {
        for (int c = 0; c < lay.dim; ++c) term.a[c] = theta[p++];
        for (int c = 0; c < lay.dim; ++c) term.w[c] = theta[p++];
        term.b = theta[p++];
      }
      interval.terms.push_back(std::move(term));
    }
    f.intervals.push_back(std::move(interval));
  }
  return f;
}

// ridge least squares for the amplitudes with fixed tanh features, matching
// the field to the displacement along straight homotopy paths
void init_amplitudes(const ParamLayout& lay, Vec& theta,
                     const std::vector<Vec>& pts, const std::vector<Vec>& disp,
                     const std::vector<Vec>& w, const Vec& b) {
  int M = lay.M;
  std::vector<Vec> states;
  std::vector<const Vec*> target;
  for (size_t k = 0; k < pts.size(); ++k) {
    for (double t : {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0}) {
      Vec y(lay.dim);
      for (int c = 0; c < lay.dim; ++c) y[c] = pts[k][c] + t * disp[k][c];
      states.push_back(std::move(y));
      target.push_back(&disp[k]);
    }
  }
  int R = static_cast<int>(states.size());
  Mat F(R, M);
  for (int r = 0; r < R; ++r)
    for (int m = 0; m < M; ++m) {
      double arg = b[m];
      for (int c = 0; c < lay.dim; ++c) arg += w[m][c] * states[r][c];
      F(r, m) = std::tanh(arg);
    }
  Mat G(M, M);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < M; ++j) {
      double s = 0.0;
      for (int r = 0; r < R; ++r) s += F(r, i) * F(r, j);
      G(i, j) = s;
    }
  double ridge = 1e-8;
  for (int i = 0; i < M; ++i) ridge += 1e-8 * G(i, i) / M;
  for (int i = 0; i < M; ++i) G(i, i) += ridge;

  std::vector<int> coords;
  if (lay.structure == FieldStructure::SelfFree) coords = {lay.driven};
  else
    for (int c = 0; c < lay.dim; ++c) coords.push_back(c);

  for (int c : coords) {
    Vec rhs(M, 0.0);
    for (int m = 0; m < M; ++m)
      for (int r = 0; r < R; ++r) rhs[m] += F(r, m) * (*target[r])[c];
    Vec a = lu_solve(G, rhs);
    // write the same amplitudes into every interval
    for (int iv = 0; iv < lay.intervals; ++iv)
      for (int m = 0; m < M; ++m) {
        int base = (iv * lay.M + m) * lay.per_term;
        if (lay.structure == FieldStructure::SelfFree) theta[base] = a[m];
        else theta[base + c] = a[m];
      }
  }
}

}  // namespace

FlowFit fit_flow_points(const std::function<Vec(const Vec&)>& target,
                        const std::vector<Vec>& pts, int dim, int M, int intervals,
                        std::uint64_t seed, int budget, FieldStructure structure,
                        int driven_coord) {
  if (M < 1 || intervals < 1) throw PreconditionViolated("M and intervals must be >= 1");
  if (pts.empty()) throw PreconditionViolated("fit needs sample points");
  if (structure == FieldStructure::SelfFree &&
      (driven_coord < 0 || driven_coord >= dim))
    throw PreconditionViolated("driven coordinate out of range");

  ParamLayout lay = make_layout(structure, dim, M, intervals,
                                structure == FieldStructure::SelfFree ? driven_coord : 0);

  std::vector<Vec> disp;
  disp.reserve(pts.size());
  for (const Vec& x : pts) {
    Vec y = target(x);
    if (static_cast<int>(y.size()) != dim)
      throw StructureError("target map has wrong dimension");
    disp.push_back(vsub(y, x));
  }

  // seeded random features
  Rng rng(seed);
  std::vector<Vec> w(M, Vec(dim, 0.0));
  Vec b(M);
  for (int m = 0; m < M; ++m) {
    for (int c = 0; c < dim; ++c) {
      if (structure == FieldStructure::SelfFree && c == driven_coord) continue;
      w[m][c] = rng.uniform(-2.0, 2.0);
    }
    b[m] = rng.uniform(-1.0, 1.0);
  }

  Vec theta(lay.total(), 0.0);
  for (int iv = 0; iv < lay.intervals; ++iv)
    for (int m = 0; m < M; ++m) {
      int base = (iv * lay.M + m) * lay.per_term;
      if (structure == FieldStructure::SelfFree) {
        for (int c = 0, q = 1; c < dim; ++c)
          if (c != driven_coord) theta[base + q++] = w[m][c];
        theta[base + lay.per_term - 1] = b[m];
      } else {
        for (int c = 0; c < dim; ++c) theta[base + dim + c] = w[m][c];
        theta[base + 2 * dim] = b[m];
      }
    }
  init_amplitudes(lay, theta, pts, disp, w, b);

  const int spi_fit = 12;
  auto residuals = [&](const Vec& th) -> Vec {
    PiecewiseConstantField f = unpack(lay, th);
    Vec r;
    r.reserve(pts.size() * dim);
    for (size_t k = 0; k < pts.size(); ++k) {
      Vec z = integrate(f, pts[k], spi_fit).z;
      for (int c = 0; c < dim; ++c) r.push_back(z[c] - (pts[k][c] + disp[k][c]));
    }
    return r;
  };
  auto cost_of = [](const Vec& r) {
    double s = 0.0;
    for (double v : r) s += v * v;
    return s;
  };

  int P = lay.total();
  Vec r = residuals(theta);
  double cost = cost_of(r);
  double lambda = 1e-3;
  int iters = 0;
  int stagnant = 0;
  bool hit_budget = false;

  while (iters < budget) {
    ++iters;
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
      for (int q = p; q < P; ++q) {
        double s = 0.0;
        for (int i = 0; i < R; ++i) s += J(i, p) * J(i, q);
        JtJ(p, q) = s;
        JtJ(q, p) = s;
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
    if (!accepted || stagnant >= 4 || cost < 1e-24) break;
  }
  if (iters >= budget) hit_budget = true;

  FlowFit fit;
  fit.field = unpack(lay, theta);
  fit.iterations = iters;
  fit.budget_exhausted = hit_budget;
  const int spi_final = 32;
  for (size_t k = 0; k < pts.size(); ++k) {
    Vec z = integrate(fit.field, pts[k], spi_final).z;
    Vec gap(dim);
    for (int c = 0; c < dim; ++c) gap[c] = z[c] - (pts[k][c] + disp[k][c]);
    fit.sup_error = std::max(fit.sup_error, norm2(gap));
  }
  return fit;
}

FlowFit fit_flow(const std::function<Vec(const Vec&)>& target, const BoxDomain& dom,
                 int M, int intervals, std::uint64_t seed, int budget) {
  int d = dom.dim();
  int per_axis = d <= 2 ? 9 : (d == 3 ? 7 : 5);
  std::vector<Vec> axes(d);
  for (int j = 0; j < d; ++j) axes[j] = linspace(dom.lo[j], dom.hi[j], per_axis);
  std::vector<Vec> pts;
  tensor_grid(axes, [&](const Vec& x) { pts.push_back(x); });
  return fit_flow_points(target, pts, d, M, intervals, seed, budget,
                         FieldStructure::Generic);
}

// ---- serialization ------------------------------------------------------

namespace {

double load_double(const ordered_json& dec, const ordered_json* hex) {
  if (hex != nullptr) return parse_hex_double(hex->get<std::string>());
  return dec.get<double>();
}

void vec_with_hex(ordered_json& node, const std::string& key, const Vec& v) {
  ordered_json dec = ordered_json::array(), hex = ordered_json::array();
  for (double x : v) {
    dec.push_back(x);
    hex.push_back(hex_double(x));
  }
  node[key] = std::move(dec);
  node[key + "_hex"] = std::move(hex);
}

Vec vec_from(const ordered_json& node, const std::string& key) {
  const ordered_json& dec = node.at(key);
  const ordered_json* hex = node.contains(key + "_hex") ? &node.at(key + "_hex") : nullptr;
  if (hex != nullptr && hex->size() != dec.size())
    throw SchemaError("hex twin length mismatch for " + key);
  Vec v(dec.size());
  for (size_t i = 0; i < dec.size(); ++i)
    v[i] = load_double(dec[i], hex != nullptr ? &(*hex)[i] : nullptr);
  return v;
}

}  // namespace

std::string field_to_json(const PiecewiseConstantField& f) {
  validate_field(f);
  ordered_json j;
  j["N"] = f.dim;
  j["tau"] = f.tau;
  j["tau_hex"] = hex_double(f.tau);
  j["intervals"] = ordered_json::array();
  for (const FieldInterval& iv : f.intervals) {
    ordered_json ji;
    ji["t0"] = iv.t0;
    ji["t0_hex"] = hex_double(iv.t0);
    ji["t1"] = iv.t1;
    ji["t1_hex"] = hex_double(iv.t1);
    ji["terms"] = ordered_json::array();
    for (const FieldTerm& term : iv.terms) {
      ordered_json jt;
      vec_with_hex(jt, "a", term.a);
      vec_with_hex(jt, "w", term.w);
      jt["b"] = term.b;
      jt["b_hex"] = hex_double(term.b);
      ji["terms"].push_back(std::move(jt));
    }
    j["intervals"].push_back(std::move(ji));
  }
  return j.dump(1);
}

PiecewiseConstantField field_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw SchemaError(std::string("field file is not valid JSON: ") + e.what());
  }
  PiecewiseConstantField f;
  try {
    f.dim = j.at("N").get<int>();
    f.tau = load_double(j.at("tau"), j.contains("tau_hex") ? &j.at("tau_hex") : nullptr);
    for (const ordered_json& ji : j.at("intervals")) {
      FieldInterval iv;
      iv.t0 = load_double(ji.at("t0"), ji.contains("t0_hex") ? &ji.at("t0_hex") : nullptr);
      iv.t1 = load_double(ji.at("t1"), ji.contains("t1_hex") ? &ji.at("t1_hex") : nullptr);
      for (const ordered_json& jt : ji.at("terms")) {
        FieldTerm term;
        term.a = vec_from(jt, "a");
        term.w = vec_from(jt, "w");
        term.b = load_double(jt.at("b"), jt.contains("b_hex") ? &jt.at("b_hex") : nullptr);
        iv.terms.push_back(std::move(term));
      }
      f.intervals.push_back(std::move(iv));
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw SchemaError(std::string("field file schema violation: ") + e.what());
  }
  try {
    validate_field(f);
  } catch (const StructureError& e) {
    throw SchemaError(std::string("field file invalid: ") + e.what());
  }
  return f;
}

}  // namespace forge
