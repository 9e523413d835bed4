#include "mfbsde/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace mfbsde {

namespace pt = boost::property_tree;

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::kPicard: return "picard";
    case Mode::kLinear: return "linear";
    case Mode::kCompare: return "compare";
    case Mode::kUtility: return "utility";
    case Mode::kQCheck: return "qcheck";
  }
  return "?";
}

std::optional<Mode> parse_mode(const std::string& s) {
  for (Mode m : {Mode::kPicard, Mode::kLinear, Mode::kCompare, Mode::kUtility, Mode::kQCheck}) {
    if (s == mode_name(m)) return m;
  }
  return std::nullopt;
}

TimeFn TimeSpec::fn() const { return slope == 0.0 ? constant_fn(value) : linear_fn(value, slope); }

MarkFn MarkSpec::fn() const { return values.size() == 1 ? constant_mark(values[0]) : per_atom_mark(values); }

namespace {

std::string join_issues(const std::vector<ConfigIssue>& issues) {
  std::string s = "invalid configuration:";
  for (const auto& i : issues) s += "\n  " + i.key + ": " + i.message;
  return s;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::optional<double> to_double(const std::string& s) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<long long> to_integer(const std::string& s) {
  long long v = 0;
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) return std::nullopt;
  return v;
}

const std::map<std::string, std::set<std::string>>& driver_keys() {
  static const std::map<std::string, std::set<std::string>> k = {
      {"zero", {"name"}},
      {"constant", {"name", "c"}},
      {"linear", {"name", "alpha1", "alpha2", "beta1", "beta2", "gamma", "eta1", "eta2"}},
      {"coupled", {"name", "ay", "az", "ak", "amean", "asin", "shift"}},
  };
  return k;
}

const std::map<std::string, std::set<std::string>>& terminal_keys() {
  static const std::map<std::string, std::set<std::string>> k = {
      {"constant", {"name", "c"}},
      {"brownian_linear", {"name", "a", "b"}},
      {"jump_linear", {"name", "psi"}},
      {"smooth_brownian", {"name", "function", "strike"}},
      {"smooth_jump", {"name", "function", "strike", "psi"}},
  };
  return k;
}

const std::set<std::string> kFunctions = {"square", "tanh", "sin", "call"};

const std::map<std::string, std::set<std::string>>& fixed_sections() {
  static const std::map<std::string, std::set<std::string>> k = {
      {"run", {"mode", "n_paths", "seed"}},
      {"grid", {"T", "M"}},
      {"levy", {"marks", "weights"}},
      {"solver", {"tol", "max_iter", "degree", "ridge", "scheme", "form", "target_norm"}},
      {"compare", {"eta_bound", "override", "probes"}},
      {"utility",
       {"x0", "b0", "sigma0", "gamma0", "alpha0", "alpha1", "beta0", "beta1", "eta0", "eta1", "theta", "control",
        "pi", "perturbations"}},
  };
  return k;
}

// Reads one section, recording issues against "section.key".
class SectionReader {
 public:
  SectionReader(std::string name, const pt::ptree* tree, std::vector<ConfigIssue>& issues)
      : name_(std::move(name)), tree_(tree), issues_(issues) {}

  bool present() const { return tree_ != nullptr; }
  bool has(const std::string& key) const { return tree_ && tree_->find(key) != tree_->not_found(); }
  std::string path(const std::string& key) const { return name_ + "." + key; }
  void fail(const std::string& key, const std::string& msg) { issues_.push_back({path(key), msg}); }

  std::optional<std::string> raw(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return trim(tree_->get<std::string>(key));
  }

  void require(const std::string& key) {
    if (!has(key)) fail(key, "missing required key");
  }

  void number(const std::string& key, double& out) {
    if (auto r = raw(key)) {
      if (auto v = to_double(*r)) {
        out = *v;
      } else {
        fail(key, "expected a finite number, got '" + *r + "'");
      }
    }
  }

  template <class Int>
  void integer(const std::string& key, Int& out, long long lo, long long hi) {
    if (auto r = raw(key)) {
      const auto v = to_integer(*r);
      if (!v) {
        fail(key, "expected an integer, got '" + *r + "'");
      } else if (*v < lo || *v > hi) {
        fail(key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "], got " + *r);
      } else {
        out = static_cast<Int>(*v);
      }
    }
  }

  void text(const std::string& key, std::string& out, const std::set<std::string>& allowed) {
    if (auto r = raw(key)) {
      if (!allowed.count(*r)) {
        std::string opts;
        for (const auto& a : allowed) opts += (opts.empty() ? "" : ", ") + a;
        fail(key, "unknown value '" + *r + "' (expected one of: " + opts + ")");
      } else {
        out = *r;
      }
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (auto r = raw(key)) {
      if (*r == "true" || *r == "1" || *r == "yes") {
        out = true;
      } else if (*r == "false" || *r == "0" || *r == "no") {
        out = false;
      } else {
        fail(key, "expected true or false, got '" + *r + "'");
      }
    }
  }

  void time_spec(const std::string& key, TimeSpec& out) {
    if (auto r = raw(key)) {
      const auto parts = split_list(*r);
      std::vector<double> v;
      for (const auto& p : parts) {
        if (auto d = to_double(p)) v.push_back(*d);
      }
      if (v.size() != parts.size() || v.empty() || v.size() > 2) {
        fail(key, "expected 'a' or 'a, b' (a + b t), got '" + *r + "'");
      } else {
        out.value = v[0];
        out.slope = v.size() == 2 ? v[1] : 0.0;
      }
    }
  }

  // lower: strict lower bound on every value (e.g. -1 for jump coefficients).
  void mark_spec(const std::string& key, MarkSpec& out, std::size_t atoms,
                 double lower = -std::numeric_limits<double>::infinity()) {
    if (auto r = raw(key)) {
      const auto parts = split_list(*r);
      std::vector<double> v;
      for (const auto& p : parts) {
        if (auto d = to_double(p)) v.push_back(*d);
      }
      if (v.size() != parts.size() || v.empty()) {
        fail(key, "expected a number or a comma-separated list, got '" + *r + "'");
        return;
      }
      if (v.size() != 1 && v.size() != atoms) {
        fail(key, "expected 1 or " + std::to_string(atoms) + " values (one per atom), got " + std::to_string(v.size()));
        return;
      }
      for (double x : v) {
        if (!(x > lower)) {
          std::ostringstream m;
          m << "coefficient " << key << " = " << x << " violates the bound " << key << " > " << lower;
          fail(key, m.str());
          return;
        }
      }
      out.values = v;
    }
  }

  void allow_only(const std::set<std::string>& allowed, const std::string& context) {
    if (!tree_) return;
    for (const auto& [k, v] : *tree_) {
      if (!allowed.count(k)) fail(k, "unknown key" + context);
    }
  }

 private:
  std::string name_;
  const pt::ptree* tree_;
  std::vector<ConfigIssue>& issues_;
};

void read_driver(SectionReader r, DriverConfig& d, std::size_t atoms) {
  if (!r.present()) return;
  r.require("name");
  r.text("name", d.name, {"zero", "constant", "linear", "coupled"});
  const auto& keys = driver_keys().at(d.name);
  r.allow_only(keys, " for driver '" + d.name + "'");
  r.number("c", d.c);
  r.time_spec("alpha1", d.alpha1);
  r.time_spec("alpha2", d.alpha2);
  r.time_spec("beta1", d.beta1);
  r.time_spec("beta2", d.beta2);
  r.time_spec("gamma", d.gamma);
  r.mark_spec("eta1", d.eta1, atoms, -1.0);
  r.mark_spec("eta2", d.eta2, atoms);
  r.number("ay", d.ay);
  r.number("az", d.az);
  r.number("ak", d.ak);
  r.number("amean", d.amean);
  r.number("asin", d.asin);
  r.number("shift", d.shift);
}

void read_terminal(SectionReader r, TerminalConfig& t, std::size_t atoms) {
  if (!r.present()) return;
  r.require("name");
  r.text("name", t.name, {"constant", "brownian_linear", "jump_linear", "smooth_brownian", "smooth_jump"});
  r.allow_only(terminal_keys().at(t.name), " for terminal '" + t.name + "'");
  r.number("c", t.c);
  r.number("a", t.a);
  r.number("b", t.b);
  r.text("function", t.function, kFunctions);
  r.number("strike", t.strike);
  r.mark_spec("psi", t.psi, atoms);
}

std::string format_number(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

ValidationError::ValidationError(std::vector<ConfigIssue> issues)
    : ConfigError(join_issues(issues)), issues_(std::move(issues)) {}

ScenarioConfig parse_config(const std::string& text) {
  std::vector<ConfigIssue> issues;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError({{"line " + std::to_string(e.line()), e.message()}});
  }

  ScenarioConfig cfg;
  std::map<std::string, const pt::ptree*> sections;
  for (const auto& [name, sub] : tree) {
    if (sub.empty() && !sub.data().empty()) {
      issues.push_back({name, "key outside any section"});
      continue;
    }
    sections[name] = &sub;
  }
  static const std::set<std::string> kVariable = {"driver", "driver2", "terminal", "terminal2"};
  for (const auto& [name, sub] : sections) {
    if (!fixed_sections().count(name) && !kVariable.count(name)) issues.push_back({name, "unknown section"});
  }
  auto section = [&](const std::string& name) {
    auto it = sections.find(name);
    return SectionReader(name, it == sections.end() ? nullptr : it->second, issues);
  };
  for (const auto& [name, keys] : fixed_sections()) section(name).allow_only(keys, "");

  SectionReader run = section("run");
  if (auto m = run.raw("mode")) {
    cfg.mode = parse_mode(*m);
    if (!cfg.mode) run.fail("mode", "unknown mode '" + *m + "' (expected picard, linear, compare, utility or qcheck)");
  }
  run.require("n_paths");
  run.integer("n_paths", cfg.n_paths, 2, 100000000);
  if (auto s = run.raw("seed")) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
    if (ec != std::errc() || p != s->data() + s->size()) {
      run.fail("seed", "expected a non-negative 64-bit integer, got '" + *s + "'");
    } else {
      cfg.seed = v;
    }
  }

  SectionReader grid = section("grid");
  grid.require("T");
  grid.require("M");
  grid.number("T", cfg.horizon);
  if (grid.has("T") && !(cfg.horizon > 0.0)) grid.fail("T", "horizon must be > 0");
  grid.integer("M", cfg.steps, 1, 100000);

  SectionReader levy = section("levy");
  if (levy.present()) {
    const auto marks = levy.raw("marks");
    const auto weights = levy.raw("weights");
    if (!marks || !weights) {
      levy.fail(marks ? "weights" : "marks", "marks and weights must be given together");
    } else {
      std::vector<double> m, w;
      bool ok = true;
      for (const auto& p : split_list(*marks)) {
        if (auto d = to_double(p)) m.push_back(*d); else ok = false;
      }
      if (!ok) levy.fail("marks", "expected a comma-separated list of numbers");
      ok = true;
      for (const auto& p : split_list(*weights)) {
        if (auto d = to_double(p)) w.push_back(*d); else ok = false;
      }
      if (!ok) levy.fail("weights", "expected a comma-separated list of numbers");
      if (m.size() != w.size()) {
        levy.fail("weights", "expected " + std::to_string(m.size()) + " weights (one per mark), got " +
                                 std::to_string(w.size()));
      } else {
        std::set<double> seen;
        bool valid = true;
        for (std::size_t j = 0; j < m.size(); ++j) {
          if (m[j] == 0.0) {
            levy.fail("marks", "atom " + std::to_string(j) + " has mark 0 (marks live on R \\ {0})");
            valid = false;
          }
          if (!seen.insert(m[j]).second) {
            levy.fail("marks", "duplicate atom mark " + format_number(m[j]));
            valid = false;
          }
          if (!(w[j] > 0.0)) {
            levy.fail("weights", "atom " + std::to_string(j) + " weight must be > 0");
            valid = false;
          }
        }
        if (valid) {
          for (std::size_t j = 0; j < m.size(); ++j) cfg.atoms.push_back({m[j], w[j]});
        }
      }
    }
  }
  const std::size_t atoms = cfg.atoms.size();

  read_driver(section("driver"), cfg.driver, atoms);
  read_terminal(section("terminal"), cfg.terminal, atoms);
  read_driver(section("driver2"), cfg.compare.driver2, atoms);
  read_terminal(section("terminal2"), cfg.compare.terminal2, atoms);

  SectionReader solver = section("solver");
  solver.number("tol", cfg.solver.tol);
  if (solver.has("tol") && !(cfg.solver.tol > 0.0)) solver.fail("tol", "must be > 0");
  solver.integer("max_iter", cfg.solver.max_iter, 1, 10000);
  solver.integer("degree", cfg.solver.degree, 1, 4);
  solver.number("ridge", cfg.solver.ridge);
  if (solver.has("ridge") && cfg.solver.ridge < 0.0) solver.fail("ridge", "must be >= 0");
  solver.text("scheme", cfg.solver.scheme, {"full", "mean"});
  solver.text("form", cfg.solver.form, {"representation", "scaled"});
  solver.number("target_norm", cfg.solver.target_norm);
  if (solver.has("target_norm") && !(cfg.solver.target_norm > 0.0 && cfg.solver.target_norm < 1.0)) {
    solver.fail("target_norm", "must lie in (0, 1)");
  }

  SectionReader cmp = section("compare");
  cmp.mark_spec("eta_bound", cfg.compare.eta_bound, atoms);
  cmp.boolean("override", cfg.compare.override_hypotheses);
  cmp.integer("probes", cfg.compare.probes, 1, 10000000);

  SectionReader u = section("utility");
  UtilityConfig& uc = cfg.utility;
  u.number("x0", uc.x0);
  if (u.has("x0") && !(uc.x0 > 0.0)) u.fail("x0", "initial wealth must be > 0");
  u.time_spec("b0", uc.b0);
  u.time_spec("sigma0", uc.sigma0);
  u.mark_spec("gamma0", uc.gamma0, atoms, -1.0);
  u.time_spec("alpha0", uc.alpha0);
  u.time_spec("alpha1", uc.alpha1);
  u.time_spec("beta0", uc.beta0);
  u.time_spec("beta1", uc.beta1);
  u.mark_spec("eta0", uc.eta0, atoms, -1.0);
  u.mark_spec("eta1", uc.eta1, atoms);
  u.number("theta", uc.theta);
  if (u.has("theta") && !(uc.theta > 0.0)) u.fail("theta", "must be > 0");
  u.text("control", uc.control, {"optimal", "constant"});
  u.number("pi", uc.pi);
  if (u.has("pi") && !(uc.pi > 0.0)) u.fail("pi", "consumption rate must be > 0");
  u.integer("perturbations", uc.perturbations, 1, 200);

  if (!issues.empty()) throw ValidationError(std::move(issues));

  std::ostringstream canon;
  for (const auto& [name, sub] : sections) {
    std::map<std::string, std::string> sorted;
    for (const auto& [k, v] : *sub) sorted[k] = trim(v.data());
    for (const auto& [k, v] : sorted) canon << name << '.' << k << '=' << v << '\n';
  }
  cfg.canonical = canon.str();
  return cfg;
}

ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError({{"config", "cannot open '" + path + "'"}});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::vector<ConfigIssue> validate_for_mode(const ScenarioConfig& cfg, Mode mode) {
  std::vector<ConfigIssue> issues;
  const bool linear_like = cfg.driver.name != "coupled";
  switch (mode) {
    case Mode::kPicard:
      if (cfg.solver.scheme == "mean" && cfg.driver.name == "linear") {
        issues.push_back({"solver.scheme", "the mean-freeze scheme needs a driver of E[Y] only; 'linear' uses the "
                                           "(Y, Z, K) mean"});
      }
      break;
    case Mode::kLinear:
      if (!linear_like) issues.push_back({"driver.name", "linear mode needs a zero, constant or linear driver"});
      break;
    case Mode::kQCheck:
      if (!linear_like) issues.push_back({"driver.name", "qcheck mode needs a zero, constant or linear driver"});
      if (cfg.driver.beta2.value != 0.0 || cfg.driver.beta2.slope != 0.0) {
        issues.push_back({"driver.beta2", "qcheck mode has no E[Z] term; beta2 must be 0"});
      }
      for (double v : cfg.driver.eta2.values) {
        if (v != 0.0) {
          issues.push_back({"driver.eta2", "qcheck mode has no E[K] term; eta2 must be 0"});
          break;
        }
      }
      break;
    case Mode::kCompare:
      if (cfg.driver.name == "linear") issues.push_back({"driver.name", "compare mode drivers depend on E[Y] only"});
      if (cfg.compare.driver2.name == "linear") {
        issues.push_back({"driver2.name", "compare mode drivers depend on E[Y] only"});
      }
      break;
    case Mode::kUtility:
      break;
  }
  return issues;
}

DriverSpec build_driver(const DriverConfig& d, const TimeGrid& grid, const LevyMeasure& levy) {
  if (d.name == "linear") return linear_driver(build_linear(d, TerminalConfig{}), grid, levy);
  DriverSpec s;
  s.name = d.name;
  if (d.name == "zero") {
    s.eval = [](const DriverInput&) { return 0.0; };
  } else if (d.name == "constant") {
    const double c = d.c;
    s.eval = [c](const DriverInput&) { return c; };
  } else {
    const std::vector<double> w = levy.weights();
    const DriverConfig c = d;
    s.eval = [c, w](const DriverInput& in) {
      double jump = 0.0;
      for (std::size_t j = 0; j < w.size(); ++j) jump += in.k[j] * w[j];
      return c.ay * in.y + c.az * in.z + c.ak * jump + c.amean * in.mean[0] + c.asin * std::sin(in.y) + c.shift;
    };
    s.lipschitz = std::max({std::abs(d.ay) + std::abs(d.asin), std::abs(d.az),
                            std::abs(d.ak) * std::sqrt(levy.total_mass()), std::abs(d.amean)});
  }
  return s;
}

MeanFunctional build_mean(const DriverConfig& d, const LevyMeasure& levy) {
  return d.name == "linear" ? triple_mean(levy) : identity_mean();
}

TerminalCondition build_terminal(const TerminalConfig& t) {
  ScalarFn phi, dphi;
  const double k = t.strike;
  if (t.function == "square") {
    phi = [k](double x) { return (x - k) * (x - k); };
    dphi = [k](double x) { return 2.0 * (x - k); };
  } else if (t.function == "tanh") {
    phi = [k](double x) { return std::tanh(x - k); };
    dphi = [k](double x) { return 1.0 - std::pow(std::tanh(x - k), 2); };
  } else if (t.function == "sin") {
    phi = [k](double x) { return std::sin(x - k); };
    dphi = [k](double x) { return std::cos(x - k); };
  } else {
    phi = [k](double x) { return std::max(x - k, 0.0); };
    dphi = [k](double x) { return x > k ? 1.0 : 0.0; };
  }
  if (t.name == "constant") return TerminalCondition::constant(t.c);
  if (t.name == "brownian_linear") return TerminalCondition::brownian_linear(t.a, t.b);
  if (t.name == "jump_linear") return TerminalCondition::jump_linear(t.psi.fn());
  if (t.name == "smooth_brownian") return TerminalCondition::smooth_of_brownian(phi, dphi);
  return TerminalCondition::smooth_of_jump(phi, t.psi.fn());
}

LinearCoefficients build_linear(const DriverConfig& d, const TerminalConfig& t) {
  LinearCoefficients c;
  if (d.name == "linear") {
    c.alpha1 = d.alpha1.fn();
    c.alpha2 = d.alpha2.fn();
    c.beta1 = d.beta1.fn();
    c.beta2 = d.beta2.fn();
    c.eta1 = d.eta1.fn();
    c.eta2 = d.eta2.fn();
    c.gamma = d.gamma.fn();
  } else if (d.name == "constant") {
    c.gamma = constant_fn(d.c);
  }
  c.terminal = build_terminal(t);
  return c;
}

WealthParams build_wealth(const UtilityConfig& u) {
  WealthParams w;
  w.x0 = u.x0;
  w.b0 = u.b0.fn();
  w.sigma0 = u.sigma0.fn();
  w.gamma0 = u.gamma0.fn();
  return w;
}

UtilityCoefficients build_utility(const UtilityConfig& u) {
  UtilityCoefficients c;
  c.alpha0 = u.alpha0.fn();
  c.alpha1 = u.alpha1.fn();
  c.beta0 = u.beta0.fn();
  c.beta1 = u.beta1.fn();
  c.eta0 = u.eta0.fn();
  c.eta1 = u.eta1.fn();
  c.theta = TerminalCondition::constant(u.theta);
  return c;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mfbsde
