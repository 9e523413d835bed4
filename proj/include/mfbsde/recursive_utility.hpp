#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "mfbsde/core.hpp"
#include "mfbsde/levy_paths.hpp"
#include "mfbsde/linear_engine.hpp"
#include "mfbsde/picard.hpp"
#include "mfbsde/regression.hpp"

namespace mfbsde {

// dX = (b0 - pi) X dt + sigma0 X dB + int gamma0 X dN~,  X(0) = x0.
struct WealthParams {
  double x0 = 1.0;
  TimeFn b0 = zero_fn();
  TimeFn sigma0 = zero_fn();
  MarkFn gamma0 = zero_mark();

  void validate(const TimeGrid& grid, const LevyMeasure& levy) const;
};

// Driver alpha0 y + alpha1 E[Y] + beta0 z + beta1 E[Z]
//        + sum_j (eta0 k_j + eta1 E[K_j]) w_j + ln(pi X),  Y(T) = theta X(T).
struct UtilityCoefficients {
  TimeFn alpha0 = zero_fn();
  TimeFn alpha1 = zero_fn();
  TimeFn beta0 = zero_fn();
  TimeFn beta1 = zero_fn();
  MarkFn eta0 = zero_mark();
  MarkFn eta1 = zero_mark();
  TerminalCondition theta = TerminalCondition::constant(1.0);  // Constant or SmoothOfBrownian

  void validate(const TimeGrid& grid, const LevyMeasure& levy) const;
};

// Consumption rate pi >= 0 on the grid nodes; deterministic controls keep one
// value per node.
class ControlProcess {
 public:
  ControlProcess() = default;
  static ControlProcess deterministic(std::vector<double> per_node);
  static ControlProcess constant(double value, std::size_t nodes);
  static ControlProcess adapted(std::size_t n_paths, std::size_t nodes, std::vector<double> node_major);

  double operator()(std::size_t n, std::size_t i) const { return adapted_ ? v_[i * n_ + n] : v_[i]; }
  bool is_deterministic() const { return !adapted_; }
  const std::vector<double>& node_values() const;  // deterministic only
  std::size_t nodes() const { return nodes_; }
  std::size_t n_paths() const { return n_; }

  void validate(const TimeGrid& grid, std::size_t n_paths) const;

 private:
  bool adapted_ = false;
  std::size_t n_ = 0;
  std::size_t nodes_ = 0;
  std::vector<double> v_;
};

struct WealthGrid {
  std::shared_ptr<const std::vector<double>> values;  // node-major
  std::size_t n_paths = 0;
  std::size_t nodes = 0;

  double operator()(std::size_t n, std::size_t i) const { return (*values)[i * n_paths + n]; }
  std::shared_ptr<const std::vector<double>> terminal() const;
};

WealthGrid simulate_wealth(const WealthParams& wp, const ControlProcess& pi, const PathEnsemble& ens);

// p(t) = E[theta | F_t]; exact for a constant theta, regression otherwise. p(T) = theta exactly.
std::vector<double> adjoint_p(const TerminalCondition& theta, const ConditionalExpectation& cexp);

struct LambdaState {
  std::vector<double> lambda;   // node-major
  std::vector<double> upsilon;  // node-major
  std::vector<double> mean;     // exp of the left sum of alpha0 + alpha1
  std::vector<double> euler;    // node-major Euler scheme of the forward equation
  std::size_t n_paths = 0;

  double at(std::size_t n, std::size_t i) const { return lambda[i * n_paths + n]; }
};

LambdaState adjoint_lambda(const UtilityCoefficients& uc, const PathEnsemble& ens);

struct AdjointState {
  std::vector<double> p;  // node-major
  LambdaState lambda;
  std::vector<double> pi_hat;  // node-major, lambda / max(p, floor)
  std::size_t floored = 0;     // count of p values below the floor
};

constexpr double kPFloor = 1e-8;

// pi_hat = lambda / p pathwise, as in the first-order condition with p = E_t[theta].
AdjointState optimal_pi(const UtilityCoefficients& uc, const ConditionalExpectation& cexp);

// Optimal deterministic consumption: pi(t) = E[lambda(t)] / P(t) with
// P(t) = E[lambda(T) theta X(T)] + int_t^T E[lambda(s)] ds (wealth-scaled adjoint),
// solved as a fixed point in the total consumption int_0^T pi dt.
struct DeterministicOptimum {
  ControlProcess pi;
  std::vector<double> scaled_p;     // P(t_i)
  std::vector<double> mean_lambda;  // E[lambda(t_i)]
  double terminal_moment = 0.0;     // E[lambda(T) theta X^0(T)] for zero consumption
  double total_consumption = 0.0;
};

DeterministicOptimum optimal_deterministic_pi(const WealthParams& wp, const UtilityCoefficients& uc,
                                              const PathEnsemble& ens);

// Literal Hamiltonian; jump integrals are weighted atom sums.
double hamiltonian(const UtilityCoefficients& uc, const WealthParams& wp, const LevyMeasure& levy, double t,
                   double x, double y, double z, std::span<const double> k, double ybar, double zbar,
                   std::span<const double> kbar, double pi, double p, double q, std::span<const double> r,
                   double lambda);
// -p + lambda / pi; exact derivative of H when p is the wealth-scaled adjoint x p.
double dH_dpi(double x, double pi, double p, double lambda);

struct UtilityValue {
  double j = 0.0;
  double se = 0.0;
};

// Closed-form route: mean system with the running term ln(pi X) (deterministic pi only).
UtilityValue evaluate_J(const WealthParams& wp, const UtilityCoefficients& uc, const ControlProcess& pi,
                        const PathEnsemble& ens);
// E[lambda(T) theta X(T) + int lambda ln(pi X) dt] with trapezoid weights; any adapted pi.
UtilityValue evaluate_J_dual(const WealthParams& wp, const UtilityCoefficients& uc, const ControlProcess& pi,
                             const PathEnsemble& ens);

// Multiplicative bumps pi (1 +- 0.04 m), m = 1..5, then time-localized Gaussian
// bumps pi (1 +- 0.2 exp(-((t - c)/0.1)^2)) at centres c = 0.05 .. 0.95 of the horizon.
std::vector<ControlProcess> perturbations(const ControlProcess& pi, const TimeGrid& grid, std::size_t count = 20);

// Driver of the utility equation for the Picard solver (paired with triple_mean).
DriverSpec utility_driver(const UtilityCoefficients& uc, const WealthGrid& wealth, const ControlProcess& pi,
                          const TimeGrid& grid, const LevyMeasure& levy);
TerminalCondition utility_terminal(const WealthParams& wp, const UtilityCoefficients& uc, const WealthGrid& wealth);
LinearCoefficients utility_linear_coefficients(const WealthParams& wp, const UtilityCoefficients& uc,
                                               const WealthGrid& wealth);

}  // namespace mfbsde
