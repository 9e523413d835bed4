#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mfbsde/core.hpp"
#include "mfbsde/picard.hpp"
#include "mfbsde/regression.hpp"

namespace mfbsde {

// Two mean-field BSDEs whose drivers depend on the mean through E[Y] only
// (DriverInput::mean has one entry).
struct ComparisonScenario {
  DriverSpec g1;
  DriverSpec g2;
  TerminalCondition xi1;
  TerminalCondition xi2;
  MarkFn eta_bound = zero_mark();
};

struct HypothesisCheck {
  std::string name;
  bool passed = true;
  std::size_t probes = 0;
  std::size_t violations = 0;
  double worst = 0.0;          // smallest slack seen (negative on violation)
  std::string counterexample;  // first violating probe
};

struct HypothesisReport {
  HypothesisCheck terminal;   // xi1 >= xi2 pathwise
  HypothesisCheck driver;     // g1(t,y,z,k,ybar1) >= g2(t,y,z,k,ybar2) for ybar1 >= ybar2
  HypothesisCheck jump;       // g2(k1) - g2(k2) >= sum_j eta(t,j)(k1_j - k2_j) w_j
  HypothesisCheck lipschitz1;
  HypothesisCheck lipschitz2;
  bool all_passed() const;
  std::vector<const HypothesisCheck*> checks() const;
};

HypothesisReport verify_hypotheses(const ComparisonScenario& sc, const PathEnsemble& ens,
                                   std::size_t n_probes = 10000, const ProbeBox& box = {},
                                   std::uint64_t seed = 17);

struct ComparisonSettings {
  PicardSettings picard;
  std::size_t n_probes = 10000;
  ProbeBox box;
  bool override_hypotheses = false;
  std::size_t batches = 20;
  double threshold_se = 3.0;
};

struct ComparisonReport {
  HypothesisReport hypotheses;
  bool solved = false;
  // per node, over paths, of Y1 - Y2
  std::vector<double> margin_min;
  std::vector<double> margin_max;
  std::vector<double> margin_mean;
  std::vector<double> margin_se;  // batch-minimum SE per node
  double global_min = 0.0;
  double global_se = 0.0;
  std::size_t argmin_node = 0;
  bool passed = false;
  std::string se_method;
  // per Picard iterate: global minimum margin and its batch SE
  std::vector<double> iterate_min;
  std::vector<double> iterate_se;
  bool iterates_ordered = true;
  PicardReport report1;
  PicardReport report2;
};

// Solves both equations with the mean-freeze Picard iteration in lockstep on
// the ensemble behind `cexp`.
ComparisonReport run_comparison(const ComparisonScenario& sc, const ConditionalExpectation& cexp,
                                const ComparisonSettings& settings = {});

}  // namespace mfbsde
