#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "forge/nn_core.hpp"

namespace forge {

// One batch construction: what to compile, on which box, how hard to try,
// and where the artifacts go. Parsed from a small TOML subset (top-level
// keys plus [flow]/[split]/[lift]/[output] tables, scalars and flat numeric
// arrays only). Unknown keys are rejected so typos fail loudly.
struct RunConfig {
  std::string target;            // expression or builtin name
  BoxDomain domain;              // input box, one axis per target input
  double eps = 0.1;              // end-to-end sup-error budget
  std::vector<int> degrees;      // surrogate degree per padded axis; one value broadcasts
  std::uint64_t seed = 0;
  double lift_prop = 1.0 / 3, flow_prop = 1.0 / 3, disc_prop = 1.0 / 3;

  int flow_terms = 2;            // tanh terms per control interval
  int flow_intervals = 2;
  int flow_budget = 400;         // optimizer iteration budget

  int n_max = 1024;              // schedule refinement cap
  int max_depth = 24;            // activated layers per compiled block
  double alpha = 0.99;           // activation slope of the emitted network

  std::string lift_backend = "auto";  // auto | shear | monotone1 | coupling
  double lift_kappa = 3.0;            // must exceed the surrogate slope bound
  int lift_layers = 4;
  int lift_budget = 200;

  std::string net_path = "net.json";
  std::string report_path = "report.json";
};

// Throws ConfigError on syntax errors, unknown keys, or invalid values.
RunConfig parse_run_config(const std::string& text);
// Reads the file (IoError when unreadable) and parses it.
RunConfig load_run_config(const std::string& path);

// Everything a finished (or failed) run wants to say: the four stage
// errors, the width bookkeeping, the lift verification record, schedule
// statistics, artifact paths, and a failure attribution when a stage gave
// up. Timings live in their own JSON subobject so reports can be compared
// byte for byte with timings stripped.
struct RunReport {
  double poly_error = 0.0;      // surrogate vs target, grid certified
  double flow_fit_error = 0.0;  // lift map vs integrated flow, after the read-out
  double disc_error = 0.0;      // integrated flow vs compiled blocks, after the read-out
  double end_to_end = 0.0;      // meaningful only when assembled
  bool assembled = false;       // end_to_end appears in the JSON iff true

  int d_x = 0, d_y = 0, padded_d = 0;
  int class_min_width = 0;      // smallest width that is universal for (d_x, d_y)
  int declared_width = 0;       // width of the emitted network

  std::string lift_backend;
  bool lift_accepted = false;
  double lift_det_min = 0.0;
  double lift_repro_error = 0.0;

  int n = 0;                    // schedule steps per control interval sweep
  bool n_met = false;
  double schedule_gap = 0.0;
  double flow_points_error = 0.0;
  int flow_iterations = 0;
  std::vector<int> block_depths;

  std::string net_path, report_path;
  std::string failure;          // empty on success; stage-attributed message otherwise
  double seconds = 0.0;         // wall time; excluded from the determinism contract
};

std::string report_to_json(const RunReport& r);

// Temp-file-plus-rename write so a crash never leaves a half-written
// artifact. Creates missing parent directories. Throws IoError.
void write_file_atomic(const std::string& path, const std::string& text);
std::string read_file(const std::string& path);  // IoError when unreadable

// Prints the minimum universal width for (d_x, d_y) together with the
// known reference formulas for related activation families.
int cmd_widths(int d_x, int d_y, std::ostream& out);

// Runs surrogate -> lift -> flow -> schedule -> blocks -> assembly, writes
// the network and report files, prints a one-line outcome. Exit 0 iff the
// assembled end-to-end error is within eps.
int cmd_compile(const RunConfig& cfg, std::ostream& out);

// Loads a network artifact, measures its grid sup error against a target
// expression on the given box, and prints the refined-grid delta.
// per_axis <= 0 picks the density the compile report used.
int cmd_verify(const std::string& net_file, const std::string& target_text,
               const Vec& lo, const Vec& hi, int per_axis, std::ostream& out);

// Emits CSV witness tables for the curve-topology demonstrations:
//   four2d    self-intersections of the planar '4' curve
//   four3d    self-intersections after the 0.1 third-axis lift (none)
//   forced    seeded perturbations of the '4' curve, all forced to intersect
//   monotone1 random width-1 nets: monotone, hence far from x^2
int cmd_topo(const std::string& demo, std::uint64_t seed, int count,
             std::ostream& out);

// Argument dispatch for the installed binary. Returns the process exit
// code: 0 success, 2 configuration or usage error, 3 verification or
// budget failure, 4 I/O error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace forge
