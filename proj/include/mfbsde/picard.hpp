#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mfbsde/core.hpp"
#include "mfbsde/regression.hpp"

namespace mfbsde {

struct PicardSettings {
  double tol = 1e-6;
  int max_iter = 50;
};

struct PicardReport {
  std::string scheme;
  std::vector<double> delta;             // max_i E|Y^n(t_i) - Y^{n-1}(t_i)|^2
  std::vector<double> integrated_delta;  // sum_i E|...|^2 dt
  std::vector<double> ratio;             // delta_n / delta_{n-1}
  int iterations = 0;
  bool converged = false;
  double ridge_factor = 0.0;
  double y0 = 0.0;
  double y0_se = 0.0;
};

struct PicardResult {
  SolutionGrid solution;
  PicardReport report;
};

// Backward sweep for a frozen driver field fhat (node-major, (M+1) x N):
//   Y_M = xi,
//   Y_i = E_i[Y_{i+1} + dt/2 fhat_{i+1}] + dt/2 fhat_i,
//   Z_i = E_i[U dW_i] / dt,  K_ij = E_i[U dN~_ij] / (rate_ij dt),
// where U is the Y-target minus its fitted value. Z and K at node M repeat node M-1.
SolutionGrid solve_inner(std::span<const double> fhat, std::span<const double> xi,
                         const ConditionalExpectation& cexp);
SolutionGrid solve_inner(std::span<const double> fhat, const TerminalCondition& tc,
                         const ConditionalExpectation& cexp);

// Y(0) as the path mean of xi + sum_i w_i fhat_i (trapezoid weights) with its standard error.
struct Estimate {
  double value = 0.0;
  double se = 0.0;
};
Estimate sweep_estimate(std::span<const double> fhat, std::span<const double> xi, const TimeGrid& grid);

PicardResult picard_full_freeze(const DriverSpec& f, const MeanFunctional& phi, const TerminalCondition& tc,
                                const ConditionalExpectation& cexp, const PicardSettings& settings = {});

// Mean-freeze iteration: only the mean E[Y^{n-1}] is frozen; each outer step
// is one explicit predictor/corrector sweep of the driver g(t, y, z, k, ybar).
class MeanFreezeIteration {
 public:
  MeanFreezeIteration(const DriverSpec& g, const TerminalCondition& tc, const ConditionalExpectation& cexp,
                      PicardSettings settings = {});

  // One outer iteration; returns true once converged or out of iterations.
  bool step();
  bool done() const { return done_; }
  const SolutionGrid& current() const { return current_; }
  const PicardReport& report() const { return report_; }
  PicardResult take() &&;

 private:
  const DriverSpec* g_;
  const ConditionalExpectation* cexp_;
  PicardSettings settings_;
  std::vector<double> xi_;
  SolutionGrid current_;
  PicardReport report_;
  bool done_ = false;
};

PicardResult picard_mean_freeze(const DriverSpec& g, const TerminalCondition& tc,
                                const ConditionalExpectation& cexp, const PicardSettings& settings = {});

struct ContractionReport {
  double beta = 0.0;
  std::vector<double> ratios;
  double max_ratio = 0.0;
};

// Applies the full-freeze map to random adapted input pairs and reports the
// beta-norm ratio of outputs to inputs.
ContractionReport contraction_check(const DriverSpec& f, const MeanFunctional& phi, const TerminalCondition& tc,
                                    const ConditionalExpectation& cexp, double beta, std::size_t pairs = 10,
                                    std::uint64_t seed = 3);

// The map Phi itself, exposed for tests.
SolutionGrid apply_full_freeze_map(const DriverSpec& f, const MeanFunctional& phi, const SolutionGrid& input,
                                   std::span<const double> xi, const ConditionalExpectation& cexp);

}  // namespace mfbsde
