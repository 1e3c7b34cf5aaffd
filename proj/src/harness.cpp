#include "forge/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "forge/errors.hpp"
#include "forge/flow.hpp"
#include "forge/lift.hpp"
#include "forge/poly_approx.hpp"
#include "forge/split_compile.hpp"
#include "forge/target_lang.hpp"
#include "forge/topology.hpp"
#include "CLI11.hpp"
#include "json.hpp"

namespace forge {

namespace {

using nlohmann::ordered_json;

// ---- config file ---------------------------------------------------------

struct TomlValue {
  enum Kind { Str, Num, Bool, Arr } kind = Num;
  std::string s;
  double num = 0.0;
  bool b = false;
  std::vector<double> arr;
};

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_number(const std::string& tok, const std::string& key) {
  try {
    size_t used = 0;
    double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + tok + "' is not a number");
  }
}

TomlValue parse_value(const std::string& raw, const std::string& key) {
  TomlValue v;
  if (raw.empty()) throw ConfigError("config key '" + key + "' has no value");
  if (raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"')
      throw ConfigError("config key '" + key + "': unterminated string");
    v.kind = TomlValue::Str;
    v.s = raw.substr(1, raw.size() - 2);
    return v;
  }
  if (raw.front() == '[') {
    if (raw.back() != ']')
      throw ConfigError("config key '" + key + "': unterminated array");
    v.kind = TomlValue::Arr;
    std::string body = raw.substr(1, raw.size() - 2);
    std::stringstream ss(body);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = trim(tok);
      if (tok.empty()) throw ConfigError("config key '" + key + "': empty array entry");
      v.arr.push_back(parse_number(tok, key));
    }
    return v;
  }
  if (raw == "true" || raw == "false") {
    v.kind = TomlValue::Bool;
    v.b = raw == "true";
    return v;
  }
  v.kind = TomlValue::Num;
  v.num = parse_number(raw, key);
  return v;
}

// Strips a trailing comment that starts outside any string literal.
std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

struct TomlDoc {
  std::map<std::string, TomlValue> values;
  mutable std::map<std::string, bool> used;

  const TomlValue* find(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) return nullptr;
    used[key] = true;
    return &it->second;
  }
};

TomlDoc parse_toml(const std::string& text) {
  TomlDoc doc;
  std::stringstream ss(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": unterminated table header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(lineno) + ": empty table name");
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    std::string full = section.empty() ? key : section + "." + key;
    if (doc.values.count(full))
      throw ConfigError("config key '" + full + "' given twice");
    doc.values[full] = parse_value(val, full);
  }
  return doc;
}

double need_num(const TomlDoc& d, const std::string& key, double fallback) {
  const TomlValue* v = d.find(key);
  if (v == nullptr) return fallback;
  if (v->kind != TomlValue::Num)
    throw ConfigError("config key '" + key + "' must be a number");
  return v->num;
}

int need_int(const TomlDoc& d, const std::string& key, int fallback) {
  double v = need_num(d, key, fallback);
  if (v != std::floor(v))
    throw ConfigError("config key '" + key + "' must be an integer");
  return static_cast<int>(v);
}

std::string need_str(const TomlDoc& d, const std::string& key, const std::string& fallback) {
  const TomlValue* v = d.find(key);
  if (v == nullptr) return fallback;
  if (v->kind != TomlValue::Str)
    throw ConfigError("config key '" + key + "' must be a string");
  return v->s;
}

std::vector<double> need_arr(const TomlDoc& d, const std::string& key) {
  const TomlValue* v = d.find(key);
  if (v == nullptr) throw ConfigError("config key '" + key + "' is required");
  if (v->kind != TomlValue::Arr)
    throw ConfigError("config key '" + key + "' must be an array");
  return v->arr;
}

// ---- shared helpers ------------------------------------------------------

// Matches the verification grid the assembly stage measures on.
int report_axis_points(int dim) {
  if (dim <= 1) return 33;
  if (dim == 2) return 9;
  if (dim == 3) return 5;
  return 3;
}

Vec grid_linspace(double lo, double hi, int n) {
  Vec v(n);
  for (int i = 0; i < n; ++i)
    v[i] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
  return v;
}

void for_each_grid_point(const BoxDomain& dom, int per_axis,
                         const std::function<void(const Vec&)>& fn) {
  const int d = dom.dim();
  std::vector<Vec> axes;
  for (int j = 0; j < d; ++j) axes.push_back(grid_linspace(dom.lo[j], dom.hi[j], per_axis));
  Vec x(d, 0.0);
  std::vector<int> idx(d, 0);
  for (;;) {
    for (int j = 0; j < d; ++j) x[j] = axes[j][idx[j]];
    fn(x);
    int j = 0;
    while (j < d && ++idx[j] == per_axis) idx[j++] = 0;
    if (j == d) break;
  }
}

// Builtin names are reserved words; everything else is an expression.
TargetFunction resolve_target(const std::string& text, int d_hint) {
  for (const std::string& n : builtin_names())
    if (n == text) return builtin_target(text, d_hint);
  return parse_target(text);
}

// The pipeline works on square maps: inputs and outputs are zero-padded to
// d = max(d_x, d_y), extra input axes run over [-1, 1].
struct PaddedTarget {
  TargetFunction f;
  int d = 0;
  BoxDomain box;
  VecFn eval;
};

PaddedTarget pad_target(const TargetFunction& f, const BoxDomain& dom) {
  if (dom.dim() != f.d_x)
    throw ConfigError("domain dimension does not match the target");
  PaddedTarget p;
  p.f = f;
  p.d = std::max(f.d_x, f.d_y);
  Vec lo = dom.lo, hi = dom.hi;
  for (int j = f.d_x; j < p.d; ++j) {
    lo.push_back(-1.0);
    hi.push_back(1.0);
  }
  p.box = BoxDomain(std::move(lo), std::move(hi));
  TargetFunction fn = f;
  int d = p.d;
  p.eval = [fn, d](const Vec& x) {
    Vec base(x.begin(), x.begin() + fn.d_x);
    Vec y = eval_target(fn, base);
    y.resize(d, 0.0);
    return y;
  };
  return p;
}

void num_with_hex(ordered_json& node, const std::string& key, double v) {
  node[key] = v;
  node[key + "_hex"] = hex_double(v);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string csv_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

// ---- config --------------------------------------------------------------

RunConfig parse_run_config(const std::string& text) {
  TomlDoc doc = parse_toml(text);
  RunConfig cfg;

  const TomlValue* t = doc.find("target");
  if (t == nullptr) throw ConfigError("config key 'target' is required");
  if (t->kind != TomlValue::Str) throw ConfigError("config key 'target' must be a string");
  cfg.target = t->s;

  std::vector<double> lo = need_arr(doc, "lo");
  std::vector<double> hi = need_arr(doc, "hi");
  if (lo.empty() || lo.size() != hi.size())
    throw ConfigError("'lo' and 'hi' must be nonempty arrays of equal length");
  for (size_t j = 0; j < lo.size(); ++j)
    if (!(lo[j] < hi[j]))
      throw ConfigError("'lo' must be strictly below 'hi' on every axis");
  cfg.domain = BoxDomain(std::move(lo), std::move(hi));

  cfg.eps = need_num(doc, "eps", -1.0);
  if (!(cfg.eps > 0.0)) throw ConfigError("config key 'eps' must be a positive number");

  if (const TomlValue* deg = doc.find("degrees")) {
    if (deg->kind != TomlValue::Arr) throw ConfigError("config key 'degrees' must be an array");
    for (double v : deg->arr) {
      if (v != std::floor(v) || v < 1.0)
        throw ConfigError("config key 'degrees' entries must be positive integers");
      cfg.degrees.push_back(static_cast<int>(v));
    }
    if (cfg.degrees.empty()) throw ConfigError("config key 'degrees' must be nonempty");
  } else {
    cfg.degrees = {8};
  }

  double seed = need_num(doc, "seed", 0.0);
  if (seed != std::floor(seed) || seed < 0.0)
    throw ConfigError("config key 'seed' must be a nonnegative integer");
  cfg.seed = static_cast<std::uint64_t>(seed);

  if (const TomlValue* bs = doc.find("budget_split")) {
    if (bs->kind != TomlValue::Arr || bs->arr.size() != 3)
      throw ConfigError("config key 'budget_split' must be an array of three proportions");
    double sum = bs->arr[0] + bs->arr[1] + bs->arr[2];
    for (double v : bs->arr)
      if (v < 0.0) throw ConfigError("config key 'budget_split' entries must be nonnegative");
    if (!(sum > 0.0)) throw ConfigError("config key 'budget_split' must have a positive sum");
    cfg.lift_prop = bs->arr[0] / sum;
    cfg.flow_prop = bs->arr[1] / sum;
    cfg.disc_prop = bs->arr[2] / sum;
  }

  cfg.flow_terms = need_int(doc, "flow.terms", cfg.flow_terms);
  cfg.flow_intervals = need_int(doc, "flow.intervals", cfg.flow_intervals);
  cfg.flow_budget = need_int(doc, "flow.budget", cfg.flow_budget);
  if (cfg.flow_terms < 1 || cfg.flow_intervals < 1 || cfg.flow_budget < 0)
    throw ConfigError("flow.terms and flow.intervals must be >= 1 and flow.budget >= 0");

  cfg.n_max = need_int(doc, "split.n_max", cfg.n_max);
  cfg.max_depth = need_int(doc, "split.max_depth", cfg.max_depth);
  cfg.alpha = need_num(doc, "split.alpha", cfg.alpha);
  if (cfg.n_max < 1 || cfg.max_depth < 1)
    throw ConfigError("split.n_max and split.max_depth must be >= 1");
  if (!(cfg.alpha > 0.0) || cfg.alpha == 1.0)
    throw ConfigError("split.alpha must be positive and different from one");

  cfg.lift_backend = need_str(doc, "lift.backend", cfg.lift_backend);
  if (cfg.lift_backend != "auto" && cfg.lift_backend != "shear" &&
      cfg.lift_backend != "monotone1" && cfg.lift_backend != "coupling")
    throw ConfigError("lift.backend must be auto, shear, monotone1, or coupling");
  cfg.lift_kappa = need_num(doc, "lift.kappa", cfg.lift_kappa);
  cfg.lift_layers = need_int(doc, "lift.layers", cfg.lift_layers);
  cfg.lift_budget = need_int(doc, "lift.budget", cfg.lift_budget);
  if (!(cfg.lift_kappa > 0.0) || cfg.lift_layers < 1 || cfg.lift_budget < 0)
    throw ConfigError("lift.kappa must be positive, lift.layers >= 1, lift.budget >= 0");

  cfg.net_path = need_str(doc, "output.net", cfg.net_path);
  cfg.report_path = need_str(doc, "output.report", cfg.report_path);
  if (cfg.net_path.empty() || cfg.report_path.empty())
    throw ConfigError("output.net and output.report must be nonempty paths");

  for (const auto& [key, value] : doc.values)
    if (!doc.used[key]) throw ConfigError("unknown config key '" + key + "'");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_file(path));
}

// ---- files ---------------------------------------------------------------

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for '" + path + "'");
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& text) {
  namespace fs = std::filesystem;
  fs::path target(path);
  std::error_code ec;
  if (target.has_parent_path()) {
    fs::create_directories(target.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + target.parent_path().string() + "'");
  }
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << text;
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move temporary file onto '" + path + "'");
  }
}

// ---- report --------------------------------------------------------------

std::string report_to_json(const RunReport& r) {
  ordered_json j;
  ordered_json stages;
  num_with_hex(stages, "poly_fit", r.poly_error);
  num_with_hex(stages, "flow_fit", r.flow_fit_error);
  num_with_hex(stages, "discretization", r.disc_error);
  if (r.assembled) num_with_hex(stages, "end_to_end", r.end_to_end);
  j["stage_errors"] = std::move(stages);

  ordered_json width;
  width["d_x"] = r.d_x;
  width["d_y"] = r.d_y;
  width["padded_d"] = r.padded_d;
  width["class_min_width"] = r.class_min_width;
  width["declared_width"] = r.declared_width;
  j["width"] = std::move(width);

  ordered_json lift;
  lift["backend"] = r.lift_backend;
  lift["accepted"] = r.lift_accepted;
  num_with_hex(lift, "det_min", r.lift_det_min);
  num_with_hex(lift, "repro_error", r.lift_repro_error);
  j["lift"] = std::move(lift);

  ordered_json sched;
  sched["n"] = r.n;
  sched["n_met"] = r.n_met;
  num_with_hex(sched, "gap", r.schedule_gap);
  num_with_hex(sched, "flow_points_error", r.flow_points_error);
  sched["flow_iterations"] = r.flow_iterations;
  sched["block_depths"] = r.block_depths;
  j["schedule"] = std::move(sched);

  ordered_json arts;
  arts["network"] = r.net_path;
  arts["report"] = r.report_path;
  j["artifacts"] = std::move(arts);

  if (!r.failure.empty()) j["failure"] = r.failure;

  ordered_json timings;
  timings["seconds"] = r.seconds;
  j["timings"] = std::move(timings);
  return j.dump(2) + "\n";
}

// ---- widths --------------------------------------------------------------

int cmd_widths(int d_x, int d_y, std::ostream& out) {
  if (d_x < 1 || d_y < 1) throw ConfigError("dimensions must be positive integers");
  int w = min_width(d_x, d_y);
  out << "w_min(d_x=" << d_x << ", d_y=" << d_y << ") = " << w
      << "   (continuous maps, leaky-ReLU, uniform norm)\n";
  if (d_y == d_x + 1)
    out << "indicator case d_y = d_x+1: the output dimension forces one extra unit\n";
  out << "\nreference widths for (" << d_x << ", " << d_y << "):\n";
  auto row = [&](const char* label, int v, const char* formula) {
    out << "  " << label;
    if (v > 0)
      out << v;
    else
      out << "-";
    out << "   " << formula << "\n";
  };
  row("uniform, leaky-ReLU          ", w, "max(d_x+1, d_y) + [d_y == d_x+1]");
  row("uniform scalar, ReLU         ", d_y == 1 ? d_x + 1 : 0, "d_x + 1, d_y = 1 only");
  row("L^p, ReLU                    ", std::max(d_x + 1, d_y), "max(d_x+1, d_y)");
  row("uniform, ReLU + STEP         ", std::max(d_x + 1, d_y), "max(d_x+1, d_y)");
  row("L^p, leaky-ReLU              ", std::max({d_x, d_y, 2}), "max(d_x, d_y, 2)");
  row("uniform, ReLU + FLOOR        ", std::max({d_x, d_y, 2}), "max(d_x, d_y, 2)");
  return 0;
}

// ---- compile -------------------------------------------------------------

int cmd_compile(const RunConfig& cfg, std::ostream& out) {
  auto t0 = std::chrono::steady_clock::now();
  TargetFunction f = resolve_target(cfg.target, cfg.domain.dim());
  PaddedTarget padded = pad_target(f, cfg.domain);
  const int d = padded.d;
  const int N = d + 1;

  RunReport rep;
  rep.d_x = f.d_x;
  rep.d_y = f.d_y;
  rep.padded_d = d;
  rep.class_min_width = min_width(f.d_x, f.d_y);
  rep.net_path = cfg.net_path;
  rep.report_path = cfg.report_path;

  auto finish = [&](int code) {
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_file_atomic(cfg.report_path, report_to_json(rep));
    if (rep.failure.empty()) {
      out << "compiled " << cfg.target << ": end-to-end error " << format_double(rep.end_to_end)
          << " within budget " << format_double(cfg.eps) << "\n";
      out << "network -> " << cfg.net_path << "\nreport  -> " << cfg.report_path << "\n";
    } else {
      out << "failed: " << rep.failure << "\nreport  -> " << cfg.report_path << "\n";
    }
    return code;
  };

  ErrorBudget budget = plan_budget(cfg.eps, cfg.lift_prop, cfg.flow_prop, cfg.disc_prop);

  std::vector<int> degrees = cfg.degrees;
  if (degrees.size() == 1) degrees.assign(d, degrees[0]);
  if (static_cast<int>(degrees.size()) != d)
    throw ConfigError("'degrees' needs one entry per padded axis (or a single value)");

  // stage 1: polynomial surrogate
  PolySurrogate p = fit_polynomial(padded.eval, d, padded.box, degrees);
  rep.poly_error = p.eps_p;

  // stage 2: lift one dimension up
  LiftTriple lift;
  try {
    if (cfg.lift_backend == "auto")
      lift = build_lift_auto(p, cfg.lift_kappa, cfg.seed, cfg.lift_budget);
    else if (cfg.lift_backend == "shear")
      lift = build_lift_shear(p, cfg.lift_kappa);
    else if (cfg.lift_backend == "monotone1")
      lift = build_lift_1d(p, cfg.lift_kappa);
    else
      lift = build_lift_coupling(p, cfg.lift_layers, cfg.seed, cfg.lift_budget);
  } catch (const VerificationError& e) {
    rep.lift_backend = cfg.lift_backend;
    rep.failure = std::string("lift: ") + e.what();
    return finish(3);
  }
  switch (lift.backend) {
    case LiftBackend::Shear: rep.lift_backend = "shear"; break;
    case LiftBackend::Monotone1d: rep.lift_backend = "monotone1"; break;
    case LiftBackend::Coupling: rep.lift_backend = "coupling"; break;
  }
  rep.lift_accepted = lift.report.accepted;
  rep.lift_det_min = lift.report.min_det;
  rep.lift_repro_error = lift.repro_error;
  if (!lift.report.accepted) {
    rep.failure = "lift verification rejected (det<0)";
    return finish(3);
  }

  // stage 3: fit a piecewise-constant field whose time-one flow tracks the
  // lift map on the image of the input box
  std::vector<Vec> pts;
  for_each_grid_point(padded.box, report_axis_points(d),
                      [&](const Vec& x) { pts.push_back(lift.alpha_map.apply(x)); });
  FieldStructure structure = d == 1 ? FieldStructure::SelfFree : FieldStructure::Generic;
  FlowFit ff = fit_flow_points(lift.phi.eval, pts, N, cfg.flow_terms, cfg.flow_intervals,
                               cfg.seed, cfg.flow_budget, structure, d == 1 ? 0 : -1);
  rep.flow_points_error = ff.sup_error;
  rep.flow_iterations = ff.iterations;

  // stage 4: schedule resolution and per-step blocks
  BoxDomain flow_dom = lifted_box(padded.box).inflate(0.2);
  NPlan np = choose_n(ff.field, flow_dom, budget.disc, cfg.n_max);
  rep.n = np.n;
  rep.n_met = np.met;
  rep.schedule_gap = np.gap;

  SplitSchedule sch = make_schedule(ff.field, np.n);
  int active = 0;
  for (const SplitStep& st : sch.steps)
    if (std::abs(st.a) > 0.0) ++active;
  double beta_gain = std::max(1.0, spectral_norm(lift.beta_map.W));
  double block_tol =
      std::max(1e-7, 0.5 * budget.disc / beta_gain / std::max(1, active));

  std::vector<NarrowNet> blocks;
  try {
    for (size_t i = 0; i < sch.steps.size(); ++i) {
      blocks.push_back(compile_step(sch.steps[i], flow_dom, cfg.alpha, block_tol,
                                    cfg.max_depth, cfg.seed + 7919 * (i + 1)));
      rep.block_depths.push_back(blocks.back().depth_activated());
    }
  } catch (const ToleranceUnreachable& e) {
    rep.failure = std::string("block compile: ") + e.what() + " (best " +
                  format_double(e.best_error) + ")";
    return finish(3);
  }

  // stage 5: assembly against the padded target
  try {
    AssemblyResult res = assemble(lift, ff.field, blocks, budget, padded.eval);
    rep.flow_fit_error = res.flow_error;
    rep.disc_error = res.disc_error;
    rep.end_to_end = res.total_error;
    rep.assembled = true;
    rep.declared_width = res.net.declared_width;
    write_file_atomic(cfg.net_path, serialize_net(res.net));
  } catch (const BudgetExceeded& e) {
    rep.flow_fit_error = e.flow_error;
    rep.disc_error = e.disc_error;
    rep.failure = std::string("assembly: ") + e.what() + " (lift " +
                  format_double(e.lift_error) + ", flow " + format_double(e.flow_error) +
                  ", blocks " + format_double(e.disc_error) + ")";
    return finish(3);
  }
  return finish(rep.end_to_end <= cfg.eps ? 0 : 3);
}

// ---- verify --------------------------------------------------------------

int cmd_verify(const std::string& net_file, const std::string& target_text,
               const Vec& lo, const Vec& hi, int per_axis, std::ostream& out) {
  NarrowNet net = deserialize_net(read_file(net_file));
  TargetFunction f = resolve_target(target_text, net.input_dim);
  const int d = std::max(f.d_x, f.d_y);
  if (d != net.input_dim || d != net.output_dim)
    throw ConfigError("target dimensions do not match the network");
  if (static_cast<int>(lo.size()) != d || lo.size() != hi.size())
    throw ConfigError("the box needs one lo/hi pair per network input");
  for (size_t j = 0; j < lo.size(); ++j)
    if (!(lo[j] < hi[j])) throw ConfigError("the box must have positive width on every axis");
  BoxDomain dom(lo, hi);
  PaddedTarget padded = pad_target(f, BoxDomain(Vec(lo.begin(), lo.begin() + f.d_x),
                                                Vec(hi.begin(), hi.begin() + f.d_x)));

  if (per_axis <= 0) per_axis = report_axis_points(d);
  auto sup_on = [&](int density) {
    double sup = 0.0;
    for_each_grid_point(dom, density, [&](const Vec& x) {
      Vec want = padded.eval(x);
      Vec got = eval_net(net, x);
      sup = std::max(sup, norm_inf(vsub(got, want)));
    });
    return sup;
  };
  double base = sup_on(per_axis);
  double refined = sup_on(2 * per_axis - 1);
  out << "sup_error = " << format_double(base) << "   (" << per_axis << " points per axis)\n";
  out << "refined_sup = " << format_double(refined) << "   (" << 2 * per_axis - 1
      << " points per axis)\n";
  out << "refined_delta = " << format_double(std::abs(refined - base)) << "\n";
  return 0;
}

// ---- topology demos ------------------------------------------------------

int cmd_topo(const std::string& demo, std::uint64_t seed, int count, std::ostream& out) {
  if (count < 1) throw ConfigError("count must be positive");
  if (demo == "four2d" || demo == "four3d") {
    bool planar = demo == "four2d";
    Polyline c = planar ? four_curve(2) : four_curve(3, 0.1);
    out << (planar ? "t_a,t_b,x,y\n" : "t_a,t_b,x,y,z\n");
    for (const CurveIntersection& ci : self_intersections(c)) {
      out << csv_double(ci.t_a) << "," << csv_double(ci.t_b);
      for (double v : ci.point) out << "," << csv_double(v);
      out << "\n";
    }
    return 0;
  }
  if (demo == "forced") {
    out << "seed,verdict,t_a,t_b,x,y,sup_distance\n";
    for (int i = 0; i < count; ++i) {
      Polyline h = perturbed_four_curve(0.3, seed + i);
      ForcedCheck c = forced_intersection_check(h, 0.4);
      const char* verdict =
          c.verdict == ForcedVerdict::Intersects ? "INTERSECTS" : "NO_INTERSECTION";
      out << seed + i << "," << verdict << "," << csv_double(c.t_a) << ","
          << csv_double(c.t_b) << "," << csv_double(c.point.empty() ? 0.0 : c.point[0])
          << "," << csv_double(c.point.size() > 1 ? c.point[1] : 0.0) << ","
          << csv_double(c.sup_distance) << "\n";
    }
    return 0;
  }
  if (demo == "monotone1") {
    out << "seed,monotone,increasing,sup_error_vs_square\n";
    for (int i = 0; i < count; ++i) {
      Rng rng(seed + i);
      NarrowNet net = random_width1_net(12, rng);
      Width1Probe probe = monotone_width1_probe(net);
      out << seed + i << "," << (probe.monotone ? 1 : 0) << ","
          << (probe.increasing ? 1 : 0) << "," << csv_double(probe.sup_error_vs_square)
          << "\n";
    }
    return 0;
  }
  throw ConfigError("unknown demo '" + demo + "' (try four2d, four3d, forced, monotone1)");
}

// ---- dispatch ------------------------------------------------------------

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"width-constrained leaky-ReLU network workbench"};
  app.require_subcommand(1);

  int dx = 0, dy = 0;
  CLI::App* widths = app.add_subcommand("widths", "print the minimum universal width");
  widths->add_option("d_x", dx, "input dimension")->required();
  widths->add_option("d_y", dy, "output dimension")->required();

  std::string cfg_path;
  CLI::App* compile = app.add_subcommand("compile", "run the full construction");
  compile->add_option("-c,--config", cfg_path, "run configuration file")->required();

  std::string net_file, target_text;
  std::vector<double> dom_vals;
  int grid = 0;
  CLI::App* verify = app.add_subcommand("verify", "measure a network artifact");
  verify->add_option("net", net_file, "network artifact file")->required();
  verify->add_option("--target", target_text, "target expression or builtin")->required();
  verify->add_option("--dom", dom_vals, "box bounds: lo hi per axis")
      ->required()
      ->expected(-2);
  verify->add_option("--grid", grid, "points per axis (0 = report density)");

  std::string demo;
  std::uint64_t seed = 0;
  int count = 100;
  CLI::App* topo = app.add_subcommand("topo", "emit a curve-topology witness table");
  topo->add_option("demo", demo, "four2d | four3d | forced | monotone1")->required();
  topo->add_option("--seed", seed, "base seed");
  topo->add_option("--count", count, "instances to run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return 2;
  }

  try {
    if (widths->parsed()) return cmd_widths(dx, dy, out);
    if (compile->parsed()) return cmd_compile(load_run_config(cfg_path), out);
    if (verify->parsed()) {
      if (dom_vals.size() % 2 != 0)
        throw ConfigError("--dom needs an even number of bounds (lo hi per axis)");
      Vec lo, hi;
      for (size_t k = 0; k < dom_vals.size(); k += 2) {
        lo.push_back(dom_vals[k]);
        hi.push_back(dom_vals[k + 1]);
      }
      return cmd_verify(net_file, target_text, lo, hi, grid, out);
    }
    return cmd_topo(demo, seed, count, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 4;
  } catch (const VerificationError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const BudgetExceeded& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const ToleranceUnreachable& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace forge
