#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "forge/errors.hpp"
#include "forge/harness.hpp"
#include "forge/nn_core.hpp"
#include "json.hpp"

using namespace forge;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  fs::path p = fs::temp_directory_path() / "forge_harness_scratch";
  fs::create_directories(p);
  return p;
}

std::string full_config(const fs::path& dir) {
  return std::string(R"(# showcase run
target = "x1^2"   # comment after a value
lo = [-1.0]
hi = [1.0]
eps = 0.2
degrees = [8]
seed = 0
budget_split = [1.0, 1.0, 1.0]

[flow]
terms = 2
intervals = 2
budget = 400

[split]
n_max = 256
max_depth = 24
alpha = 0.99

[lift]
backend = "monotone1"
kappa = 3.0

[output]
net = ")") +
         (dir / "net.json").string() + "\"\nreport = \"" + (dir / "report.json").string() +
         "\"\n";
}

std::string strip_timings(const std::string& json_text) {
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(json_text);
  j.erase("timings");
  return j.dump();
}

}  // namespace

TEST_CASE("config parser reads every section and applies defaults") {
  fs::path dir = scratch_dir();
  RunConfig cfg = parse_run_config(full_config(dir));
  CHECK(cfg.target == "x1^2");
  CHECK(cfg.domain.dim() == 1);
  CHECK(cfg.domain.lo[0] == -1.0);
  CHECK(cfg.eps == 0.2);
  CHECK(cfg.degrees == std::vector<int>{8});
  CHECK(cfg.lift_prop == doctest::Approx(1.0 / 3));
  CHECK(cfg.flow_terms == 2);
  CHECK(cfg.flow_budget == 400);
  CHECK(cfg.n_max == 256);
  CHECK(cfg.alpha == 0.99);
  CHECK(cfg.lift_backend == "monotone1");
  CHECK(cfg.lift_kappa == 3.0);

  RunConfig slim = parse_run_config(
      "target = \"x1\"\nlo = [0.0]\nhi = [1.0]\neps = 0.5\n");
  CHECK(slim.seed == 0);
  CHECK(slim.degrees == std::vector<int>{8});
  CHECK(slim.flow_terms == 2);
  CHECK(slim.max_depth == 24);
  CHECK(slim.lift_backend == "auto");
  CHECK(slim.net_path == "net.json");

  RunConfig alt = parse_run_config(
      "target = \"x1\"\nlo = [0.0]\nhi = [1.0]\neps = 0.5\nseed = 11\n"
      "[flow]\nbudget = 300\n");
  CHECK(alt.seed == 11);
  CHECK(alt.flow_budget == 300);
}

TEST_CASE("config parser rejects malformed input") {
  CHECK_THROWS_AS(parse_run_config("lo = [0.0]\nhi = [1.0]\neps = 0.1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("target = \"x1\"\neps = 0.1\n"), ConfigError);
  CHECK_THROWS_AS(
      parse_run_config("target = \"x1\"\nlo = [0.0]\nhi = [1.0]\n"), ConfigError);
  CHECK_THROWS_AS(
      parse_run_config("target = \"x1\"\nlo = [0.0]\nhi = [1.0]\neps = -0.1\n"),
      ConfigError);
  CHECK_THROWS_AS(
      parse_run_config("target = \"x1\"\nlo = [0.0]\nhi = [1.0]\neps = 0.1\nwat = 3\n"),
      ConfigError);
  CHECK_THROWS_AS(
      parse_run_config("target = \"x1\"\nlo = [0.0]\nhi = [1.0]\neps = 0.1\neps = 0.2\n"),
      ConfigError);
  CHECK_THROWS_AS(
      parse_run_config("target = \"x1\"\nlo = [1.0]\nhi = [0.0]\neps = 0.1\n"),
      ConfigError);
  CHECK_THROWS_AS(
      parse_run_config("target = \"x1\"\nlo = [0.0]\nhi = [1.0]\neps = \"big\"\n"),
      ConfigError);
  CHECK_THROWS_AS(parse_run_config("target = \"x1\"\nlo = [0.0]\nhi = [1.0]\n"
                                   "eps = 0.1\n[split]\nalpha = 1.0\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config("target = \"x1\"\nlo = [0.0]\nhi = [1.0]\n"
                                   "eps = 0.1\n[lift]\nbackend = \"magic\"\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config("target = \"x1\"\nlo = [0.0]\nhi = [1.0]\n"
                                   "eps = 0.1\ndegrees = [2.5]\n"),
                  ConfigError);
}

TEST_CASE("atomic writes land whole and create parent directories") {
  fs::path dir = scratch_dir() / "nested" / "deeper";
  fs::remove_all(scratch_dir() / "nested");
  fs::path file = dir / "artifact.txt";
  write_file_atomic(file.string(), "payload\n");
  CHECK(read_file(file.string()) == "payload\n");
  CHECK_FALSE(fs::exists(file.string() + ".tmp"));
  write_file_atomic(file.string(), "replaced\n");
  CHECK(read_file(file.string()) == "replaced\n");
  CHECK_THROWS_AS(read_file((dir / "missing.txt").string()), IoError);
}

TEST_CASE("report json carries hex twins and hides absent stages") {
  RunReport r;
  r.poly_error = 0.125;
  r.assembled = false;
  r.failure = "lift verification rejected (det<0)";
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(report_to_json(r));
  CHECK(j["stage_errors"]["poly_fit"] == 0.125);
  CHECK(parse_hex_double(j["stage_errors"]["poly_fit_hex"].get<std::string>()) == 0.125);
  CHECK_FALSE(j["stage_errors"].contains("end_to_end"));
  CHECK(j["failure"] == "lift verification rejected (det<0)");
  CHECK(j.contains("timings"));

  r.assembled = true;
  r.end_to_end = 0.0625;
  r.failure.clear();
  j = nlohmann::ordered_json::parse(report_to_json(r));
  CHECK(j["stage_errors"]["end_to_end"] == 0.0625);
  CHECK_FALSE(j.contains("failure"));
}

TEST_CASE("widths command prints the formula value and the indicator flag") {
  std::ostringstream out;
  CHECK(cmd_widths(2, 2, out) == 0);
  CHECK(out.str().find("w_min(d_x=2, d_y=2) = 3") != std::string::npos);
  CHECK(out.str().find("indicator") == std::string::npos);

  std::ostringstream out12;
  cmd_widths(1, 2, out12);
  CHECK(out12.str().find("w_min(d_x=1, d_y=2) = 3") != std::string::npos);
  CHECK(out12.str().find("indicator case d_y = d_x+1") != std::string::npos);

  std::ostringstream out53;
  cmd_widths(5, 3, out53);
  CHECK(out53.str().find("w_min(d_x=5, d_y=3) = 6") != std::string::npos);

  std::ostringstream sink;
  CHECK_THROWS_AS(cmd_widths(0, 1, sink), ConfigError);
}

TEST_CASE("topology demos emit the expected witness tables") {
  std::ostringstream planar;
  cmd_topo("four2d", 0, 1, planar);
  std::istringstream lines(planar.str());
  std::string header, row, extra;
  CHECK(std::getline(lines, header));
  CHECK(header == "t_a,t_b,x,y");
  CHECK(std::getline(lines, row));
  CHECK(row.find(",0,0") != std::string::npos);
  CHECK_FALSE(std::getline(lines, extra));

  std::ostringstream lifted;
  cmd_topo("four3d", 0, 1, lifted);
  CHECK(lifted.str() == "t_a,t_b,x,y,z\n");

  std::ostringstream forced;
  cmd_topo("forced", 17, 5, forced);
  int intersects = 0;
  std::istringstream fl(forced.str());
  std::string line;
  std::getline(fl, line);  // header
  while (std::getline(fl, line))
    if (line.find("INTERSECTS") != std::string::npos) ++intersects;
  CHECK(intersects == 5);

  std::ostringstream mono;
  cmd_topo("monotone1", 5, 5, mono);
  std::istringstream ml(mono.str());
  std::getline(ml, line);  // header
  int rows = 0;
  while (std::getline(ml, line)) {
    ++rows;
    std::stringstream cells(line);
    std::string seed, monotone, increasing, err;
    std::getline(cells, seed, ',');
    std::getline(cells, monotone, ',');
    std::getline(cells, increasing, ',');
    std::getline(cells, err, ',');
    CHECK(monotone == "1");
    CHECK(std::stod(err) >= 0.499);
  }
  CHECK(rows == 5);

  std::ostringstream sink;
  CHECK_THROWS_AS(cmd_topo("klein_bottle", 0, 1, sink), ConfigError);
}

TEST_CASE("compile runs the whole pipeline and verify reproduces its report") {
  fs::path dir = scratch_dir() / "x2run";
  fs::remove_all(dir);
  fs::create_directories(dir);
  RunConfig cfg = parse_run_config(full_config(dir));

  std::ostringstream out;
  int code = cmd_compile(cfg, out);
  CHECK(code == 0);
  CHECK(out.str().find("within budget") != std::string::npos);

  nlohmann::ordered_json rep =
      nlohmann::ordered_json::parse(read_file((dir / "report.json").string()));
  double reported = rep["stage_errors"]["end_to_end"].get<double>();
  CHECK(reported <= 0.2);
  CHECK(rep["width"]["declared_width"] == 2);
  CHECK(rep["width"]["class_min_width"] == 2);
  CHECK(rep["lift"]["accepted"] == true);
  CHECK(rep["schedule"]["n_met"] == true);
  CHECK(rep["schedule"]["block_depths"].size() > 0);

  NarrowNet net = deserialize_net(read_file((dir / "net.json").string()));
  CHECK(net.declared_width == 2);
  CHECK(net.input_dim == 1);

  // the verify command re-measures the artifact on the report grid
  std::ostringstream vout;
  CHECK(cmd_verify((dir / "net.json").string(), "x1^2", {-1.0}, {1.0}, 0, vout) == 0);
  std::istringstream vl(vout.str());
  std::string sup_line;
  std::getline(vl, sup_line);
  double measured = std::stod(sup_line.substr(sup_line.find('=') + 1));
  CHECK(std::abs(measured - reported) <= 1e-12);

  // doubling the grid moves the measurement by less than ten percent
  std::string refined_line;
  std::getline(vl, refined_line);
  double refined = std::stod(refined_line.substr(refined_line.find('=') + 1));
  CHECK(std::abs(refined - measured) <= 0.1 * measured);
}

TEST_CASE("identical config and seed give byte-identical artifacts") {
  fs::path dir = scratch_dir() / "detrun";
  fs::remove_all(dir);
  fs::create_directories(dir);
  RunConfig cfg = parse_run_config(full_config(dir));

  std::ostringstream out1;
  REQUIRE(cmd_compile(cfg, out1) == 0);
  std::string net1 = read_file((dir / "net.json").string());
  std::string rep1 = read_file((dir / "report.json").string());

  std::ostringstream out2;
  REQUIRE(cmd_compile(cfg, out2) == 0);
  CHECK(read_file((dir / "net.json").string()) == net1);
  CHECK(strip_timings(read_file((dir / "report.json").string())) == strip_timings(rep1));
}

TEST_CASE("forcing the shear lift onto the plane swap reports the rejection") {
  fs::path dir = scratch_dir() / "swaprun";
  fs::remove_all(dir);
  fs::create_directories(dir);
  RunConfig cfg;
  cfg.target = "swap2";
  cfg.domain = BoxDomain({-1.0, -1.0}, {1.0, 1.0});
  cfg.eps = 0.3;
  cfg.degrees = {3};
  cfg.lift_backend = "shear";
  cfg.net_path = (dir / "net.json").string();
  cfg.report_path = (dir / "report.json").string();

  std::ostringstream out;
  CHECK(cmd_compile(cfg, out) == 3);
  nlohmann::ordered_json rep =
      nlohmann::ordered_json::parse(read_file(cfg.report_path));
  CHECK(rep["failure"].get<std::string>().find("lift verification rejected (det<0)") !=
        std::string::npos);
  CHECK(rep["lift"]["accepted"] == false);
  CHECK(std::abs(rep["lift"]["det_min"].get<double>() + 1.0) <= 1e-9);
  CHECK_FALSE(rep["stage_errors"].contains("end_to_end"));
  CHECK_FALSE(fs::exists(cfg.net_path));
}

TEST_CASE("verify rejects dimension mismatches and unreadable files") {
  fs::path dir = scratch_dir() / "verifyerr";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<Layer> ls;
  ls.push_back({AffineMap(Mat::identity(1), Vec(1, 0.0)), false});
  NarrowNet ident(1, 1, 1, 0.5, std::move(ls));
  fs::path netfile = dir / "ident.json";
  write_file_atomic(netfile.string(), serialize_net(ident));

  std::ostringstream out;
  CHECK(cmd_verify(netfile.string(), "x1", {-1.0}, {1.0}, 0, out) == 0);
  CHECK(out.str().find("sup_error = 0 ") != std::string::npos);

  std::ostringstream sink;
  CHECK_THROWS_AS(cmd_verify(netfile.string(), "x1;x2", {-1.0}, {1.0}, 0, sink),
                  ConfigError);
  CHECK_THROWS_AS(cmd_verify(netfile.string(), "x1", {-1.0, 0.0}, {1.0, 1.0}, 0, sink),
                  ConfigError);
  CHECK_THROWS_AS(cmd_verify((dir / "nope.json").string(), "x1", {-1.0}, {1.0}, 0, sink),
                  IoError);
  write_file_atomic((dir / "garbage.json").string(), "{\"layers\": 3}");
  CHECK_THROWS(cmd_verify((dir / "garbage.json").string(), "x1", {-1.0}, {1.0}, 0, sink));
}

TEST_CASE("cli dispatch maps argument and file problems to exit codes") {
  auto run = [](std::vector<const char*> argv) {
    std::ostringstream out, err;
    argv.insert(argv.begin(), "forge");
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  };
  CHECK(run({"widths", "2", "2"}) == 0);
  CHECK(run({"widths", "2"}) == 2);
  CHECK(run({"frobnicate"}) == 2);
  CHECK(run({}) == 2);
  CHECK(run({"topo", "klein_bottle"}) == 2);
  CHECK(run({"compile", "-c", "/definitely/not/here.toml"}) == 4);
  CHECK(run({"verify", "/definitely/not/here.json", "--target", "x1", "--dom", "-1",
             "1"}) == 4);

  std::ostringstream out, err;
  std::vector<const char*> argv{"forge", "--help"};
  CHECK(run_cli(2, argv.data(), out, err) == 0);
  CHECK(out.str().find("widths") != std::string::npos);
}
