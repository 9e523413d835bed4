#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "mfbsde/config.hpp"
#include "mfbsde/runner.hpp"

using namespace mfbsde;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"(
[run]
mode = picard
n_paths = 10000

[grid]
T = 1
M = 100

[driver]
name = zero

[terminal]
name = constant
c = 1
)";

const char* kViolating = R"(
[run]
n_paths = 500
seed = 3
[grid]
T = 1
M = 10
[levy]
marks = 1.0
weights = 1.0
[driver]
name = coupled
ak = -1
[driver2]
name = coupled
ak = -1
[compare]
eta_bound = 1.0
probes = 2000
)";

std::vector<ConfigIssue> issues_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ValidationError& e) {
    return e.issues();
  }
  return {};
}

bool has_issue(const std::vector<ConfigIssue>& v, const std::string& key, const std::string& fragment = "") {
  for (const auto& i : v) {
    if (i.key == key && i.message.find(fragment) != std::string::npos) return true;
  }
  return false;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Everything after the first line (the manifest reference).
std::string csv_body(const fs::path& p) {
  const std::string s = slurp(p);
  return s.substr(s.find('\n') + 1);
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("mfbsde_cli_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path write_file(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

int cli(const std::string& args) {
  const char* exe = std::getenv("MFBSDE_CLI");
  REQUIRE_MESSAGE(exe != nullptr, "MFBSDE_CLI must point at the command-line binary");
  const std::string cmd = std::string(exe) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("minimal picard scenario parses") {
  const ScenarioConfig c = parse_config(kMinimal);
  REQUIRE(c.mode.has_value());
  CHECK(*c.mode == Mode::kPicard);
  CHECK(c.horizon == 1.0);
  CHECK(c.steps == 100);
  CHECK(c.atoms.empty());
  CHECK(c.n_paths == 10000);
  CHECK(c.driver.name == "zero");
  CHECK(c.terminal.name == "constant");
  CHECK(c.terminal.c == 1.0);
  CHECK(validate_for_mode(c, Mode::kPicard).empty());
}

TEST_CASE("jump coefficient below -1 names the coefficient and the bound") {
  const auto v = issues_of(R"(
[run]
n_paths = 100
[grid]
T = 1
M = 10
[levy]
marks = 1
weights = 1
[driver]
name = linear
eta1 = -1.5
)");
  REQUIRE(v.size() == 1);
  CHECK(v[0].key == "driver.eta1");
  CHECK(v[0].message.find("-1.5") != std::string::npos);
  CHECK(v[0].message.find("> -1") != std::string::npos);
}

TEST_CASE("duplicate atom marks are rejected") {
  const auto v = issues_of("[run]\nn_paths=10\n[grid]\nT=1\nM=5\n[levy]\nmarks = 0.5, 0.5\nweights = 1, 2\n");
  CHECK(has_issue(v, "levy.marks", "duplicate"));
}

TEST_CASE("all validation errors are reported together, each with its key path") {
  const auto v = issues_of(R"(
[run]
mode = sideways
[grid]
T = -1
colour = blue
[levy]
marks = 1, 2
weights = 1, 0
[driver]
name = zero
alpha1 = 0.1
[solver]
degree = 9
[extra]
x = 1
)");
  CHECK(has_issue(v, "run.mode", "unknown mode"));
  CHECK(has_issue(v, "run.n_paths", "missing"));
  CHECK(has_issue(v, "grid.T", "> 0"));
  CHECK(has_issue(v, "grid.M", "missing"));
  CHECK(has_issue(v, "grid.colour", "unknown key"));
  CHECK(has_issue(v, "levy.weights", "> 0"));
  CHECK(has_issue(v, "driver.alpha1", "driver 'zero'"));
  CHECK(has_issue(v, "solver.degree", "[1, 4]"));
  CHECK(has_issue(v, "extra", "unknown section"));
  CHECK(v.size() == 9);
}

TEST_CASE("malformed documents and per-atom list lengths") {
  const auto dup = issues_of("[run]\nn_paths = 1\nn_paths = 2\n");
  REQUIRE(dup.size() == 1);
  CHECK(dup[0].key.rfind("line", 0) == 0);
  const auto len = issues_of(
      "[run]\nn_paths=10\n[grid]\nT=1\nM=5\n[levy]\nmarks=1,2\nweights=1,1\n[driver]\nname=linear\neta2=1,2,3\n");
  CHECK(has_issue(len, "driver.eta2", "1 or 2 values"));
  const auto num = issues_of("[run]\nn_paths=ten\n[grid]\nT=1\nM=5\n");
  CHECK(has_issue(num, "run.n_paths", "integer"));
  CHECK_THROWS_AS(load_config("/nonexistent/file.ini"), ValidationError);
}

TEST_CASE("mode-dependent validation") {
  ScenarioConfig c = parse_config(kMinimal);
  c.driver.name = "coupled";
  CHECK(has_issue(validate_for_mode(c, Mode::kLinear), "driver.name"));
  c.driver.name = "linear";
  CHECK(has_issue(validate_for_mode(c, Mode::kCompare), "driver.name"));
  c.solver.scheme = "mean";
  CHECK(has_issue(validate_for_mode(c, Mode::kPicard), "solver.scheme"));
  c.driver.beta2.value = 0.1;
  CHECK(has_issue(validate_for_mode(c, Mode::kQCheck), "driver.beta2"));
}

TEST_CASE("FNV-1a reference vectors") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("CSV rows use the fixed long format") {
  CsvTable t{"x.csv", {}};
  t.scalar("y0", 1.0, 0.0);
  t.at_node(3, 0.25, "ybar", 0.5);
  t.at_index(2, "delta", 1e-3, 2e-4);
  CHECK(t.body() == "node,time,statistic,value,se\n,,y0,1,0\n3,0.25,ybar,0.5,\n2,,delta,0.001,0.00020000000000000001\n");
}

TEST_CASE("picard mode on the trivial scenario gives Y(0) = 1 +- 0") {
  const RunResult r = execute(Mode::kPicard, parse_config(kMinimal), {std::string("."), std::nullopt, 2000});
  CHECK(r.exit_code == kExitOk);
  REQUIRE(!r.tables.empty());
  const CsvRow& y0 = r.tables[0].rows[0];
  CHECK(y0.statistic == "y0");
  CHECK(y0.value == 1.0);
  REQUIRE(y0.se.has_value());
  CHECK(*y0.se == 0.0);
}

TEST_CASE("compare mode on a violating pair exits nonzero and names the inequality") {
  const RunResult r = execute(Mode::kCompare, parse_config(kViolating));
  CHECK(r.exit_code == kExitHypothesis);
  CHECK(r.message.find("jump") != std::string::npos);
  CHECK(r.message.find("sum_j eta") != std::string::npos);
  CHECK(r.diagnostics["comparison_harness"]["solved"] == false);
  for (const CsvTable& t : r.tables) CHECK(t.file == "hypotheses.csv");
}

TEST_CASE("module errors are qualified and produce no tables") {
  ScenarioConfig c = parse_config(kMinimal);
  c.driver.name = "linear";
  c.driver.alpha2.value = 40.0;  // no admissible Neumann window exists
  const RunResult r = execute(Mode::kLinear, c, {std::string("."), std::nullopt, 100});
  CHECK(r.exit_code == kExitValidation);
  CHECK(r.message.rfind("[linear_engine]", 0) == 0);
  CHECK(r.tables.empty());
}

TEST_CASE("same config and seed give identical numbers; a new seed does not") {
  const ScenarioConfig c = parse_config(kViolating);
  ScenarioConfig p = parse_config(kMinimal);
  p.terminal.name = "brownian_linear";
  const RunResult a = execute(Mode::kPicard, p, {std::string("."), 7, 2000});
  const RunResult b = execute(Mode::kPicard, p, {std::string("."), 7, 2000});
  const RunResult d = execute(Mode::kPicard, p, {std::string("."), 8, 2000});
  REQUIRE(a.tables.size() == b.tables.size());
  for (std::size_t k = 0; k < a.tables.size(); ++k) CHECK(a.tables[k].body() == b.tables[k].body());
  CHECK(a.config_hash == b.config_hash);
  CHECK(a.config_hash != d.config_hash);
  CHECK(a.tables[0].body() != d.tables[0].body());
  CHECK(execute(Mode::kCompare, c).message == execute(Mode::kCompare, c).message);
}

TEST_CASE("command line: exit codes, manifest and byte-identical reruns") {
  const fs::path dir = scratch("main");
  const fs::path ok = write_file(dir, "ok.ini", kMinimal);
  const fs::path bad = write_file(dir, "bad.ini", "[run]\nn_paths = 10\n[grid]\nT = 0\nM = 5\n");
  const fs::path vio = write_file(dir, "vio.ini", kViolating);
  const fs::path slow = write_file(dir, "slow.ini", R"(
[run]
n_paths = 500
[grid]
T = 1
M = 20
[driver]
name = coupled
ay = 1
amean = 1
shift = 1
[terminal]
name = brownian_linear
[solver]
max_iter = 1
tol = 1e-12
)");

  CHECK(cli("validate --config " + ok.string()) == 0);
  CHECK(cli("validate --config " + bad.string()) == 2);
  CHECK(cli("picard --config " + (dir / "missing.ini").string()) == 2);
  CHECK(cli("picard") == 2);
  CHECK(cli("linear --config " + ok.string() + " --paths 1 --out " + (dir / "p1").string()) == 2);

  const fs::path r1 = dir / "r1", r2 = dir / "r2";
  CHECK(cli("picard --config " + ok.string() + " --paths 3000 --seed 5 --out " + r1.string()) == 0);
  CHECK(cli("picard --config " + ok.string() + " --paths 3000 --seed 5 --out " + r2.string()) == 0);
  for (const char* f : {"solution.csv", "picard_report.csv"}) {
    REQUIRE(fs::exists(r1 / f));
    CHECK(slurp(r1 / f) == slurp(r2 / f));
  }
  const nlohmann::json m = nlohmann::json::parse(slurp(r1 / "manifest.json"));
  CHECK(m["seed"] == 5);
  CHECK(m["n_paths"] == 3000);
  CHECK(m["exit_code"] == 0);
  CHECK(m["outputs"].size() == 2);
  CHECK(m.contains("wall_clock_seconds"));
  CHECK(m.contains("artifact_version"));
  const std::string first = slurp(r1 / "solution.csv").substr(0, slurp(r1 / "solution.csv").find('\n'));
  CHECK(first == "# manifest=manifest.json config_hash=" + m["config_hash"].get<std::string>() + " mode=picard");
  CHECK(csv_body(r1 / "solution.csv").rfind("node,time,statistic,value,se\n,,y0,1,0\n", 0) == 0);

  const fs::path r3 = dir / "r3";
  CHECK(cli("compare --config " + vio.string() + " --out " + r3.string()) == 4);
  const nlohmann::json m3 = nlohmann::json::parse(slurp(r3 / "manifest.json"));
  CHECK(m3["exit_code"] == 4);
  CHECK(m3["message"].get<std::string>().find("jump") != std::string::npos);
  CHECK_FALSE(fs::exists(r3 / "comparison.csv"));

  const fs::path r4 = dir / "r4";
  CHECK(cli("picard --config " + slow.string() + " --out " + r4.string()) == 3);
  CHECK(nlohmann::json::parse(slurp(r4 / "manifest.json"))["exit_code"] == 3);
  fs::remove_all(dir);
}
