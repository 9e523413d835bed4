#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mfbsde/core.hpp"
#include "mfbsde/errors.hpp"
#include "mfbsde/levy_paths.hpp"
#include "mfbsde/linear_engine.hpp"
#include "mfbsde/recursive_utility.hpp"

namespace mfbsde {

enum class Mode { kPicard, kLinear, kCompare, kUtility, kQCheck };

const char* mode_name(Mode m);
std::optional<Mode> parse_mode(const std::string& s);

// "a" or "a, b" meaning a + b t.
struct TimeSpec {
  double value = 0.0;
  double slope = 0.0;
  TimeFn fn() const;
};

// One value for every atom, or one value per atom.
struct MarkSpec {
  std::vector<double> values{0.0};
  MarkFn fn() const;
  double at(std::size_t atom) const { return values.size() == 1 ? values[0] : values[atom]; }
};

struct DriverConfig {
  std::string name = "zero";  // zero | constant | linear | coupled
  double c = 0.0;
  // linear
  TimeSpec alpha1, alpha2, beta1, beta2, gamma;
  MarkSpec eta1, eta2;
  // coupled: ay y + az z + ak sum_j k_j w_j + amean E[Y] + asin sin(y) + shift
  double ay = 0.0, az = 0.0, ak = 0.0, amean = 0.0, asin = 0.0, shift = 0.0;
};

struct TerminalConfig {
  std::string name = "constant";  // constant | brownian_linear | jump_linear | smooth_brownian | smooth_jump
  double c = 0.0;
  double a = 1.0;
  double b = 0.0;
  std::string function = "square";  // square | tanh | sin | call
  double strike = 0.0;
  MarkSpec psi{{1.0}};
};

struct SolverConfig {
  double tol = 1e-6;
  int max_iter = 50;
  int degree = 2;
  double ridge = 1e-8;
  std::string scheme = "full";  // full | mean
  std::string form = "representation";  // representation | scaled
  double target_norm = 0.5;
};

struct CompareConfig {
  DriverConfig driver2;
  TerminalConfig terminal2;
  MarkSpec eta_bound;
  bool override_hypotheses = false;
  std::size_t probes = 10000;
};

struct UtilityConfig {
  double x0 = 1.0;
  TimeSpec b0, sigma0;
  MarkSpec gamma0;
  TimeSpec alpha0, alpha1, beta0, beta1;
  MarkSpec eta0, eta1;
  double theta = 1.0;
  std::string control = "optimal";  // optimal | constant
  double pi = 1.0;
  std::size_t perturbations = 20;
};

struct ScenarioConfig {
  std::optional<Mode> mode;
  double horizon = 1.0;
  long long steps = 100;
  std::vector<Atom> atoms;
  std::size_t n_paths = 10000;
  std::uint64_t seed = 1;
  DriverConfig driver;
  TerminalConfig terminal;
  SolverConfig solver;
  CompareConfig compare;
  UtilityConfig utility;
  std::string canonical;  // normalized key = value listing, the input of the config hash

  TimeGrid grid() const { return build_grid(horizon, steps); }
  LevyMeasure levy() const { return LevyMeasure(atoms); }
};

struct ConfigIssue {
  std::string key;  // section.key
  std::string message;
};

// Collects every problem in the document before giving up.
class ValidationError : public ConfigError {
 public:
  explicit ValidationError(std::vector<ConfigIssue> issues);
  const std::vector<ConfigIssue>& issues() const { return issues_; }

 private:
  std::vector<ConfigIssue> issues_;
};

// Parses the INI-style document described in the README; throws ValidationError.
ScenarioConfig parse_config(const std::string& text);
ScenarioConfig load_config(const std::string& path);

// Mode-dependent checks that need the mode to be known (e.g. linear mode needs a
// linear driver). Returns the issues, empty when valid.
std::vector<ConfigIssue> validate_for_mode(const ScenarioConfig& cfg, Mode mode);

// Builders from a validated config.
DriverSpec build_driver(const DriverConfig& d, const TimeGrid& grid, const LevyMeasure& levy);
MeanFunctional build_mean(const DriverConfig& d, const LevyMeasure& levy);
TerminalCondition build_terminal(const TerminalConfig& t);
LinearCoefficients build_linear(const DriverConfig& d, const TerminalConfig& t);
WealthParams build_wealth(const UtilityConfig& u);
UtilityCoefficients build_utility(const UtilityConfig& u);

// 64-bit FNV-1a, printed as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace mfbsde
