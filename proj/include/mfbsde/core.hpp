#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mfbsde/functions.hpp"
#include "mfbsde/levy_paths.hpp"

namespace mfbsde {

// ---------------------------------------------------------------- terminal

struct ConstantTerminal {
  double value = 0.0;
};
// a * B(T) + b
struct BrownianLinearTerminal {
  double a = 1.0;
  double b = 0.0;
};
// sum over steps and atoms of psi(t_i, zeta_j) times the compensated count
struct JumpLinearTerminal {
  MarkFn psi;
};
struct SmoothOfBrownianTerminal {
  ScalarFn phi;
  ScalarFn dphi;
};
// phi(G) with G the jump-linear functional of psi
struct SmoothOfJumpTerminal {
  ScalarFn phi;
  MarkFn psi;
};
// theta * X(T); theta is a constant or a smooth function of B(T).
struct WealthLinearTerminal {
  std::variant<ConstantTerminal, SmoothOfBrownianTerminal> factor;
  std::shared_ptr<const std::vector<double>> terminal_wealth;  // one entry per path
  TimeFn sigma0;
  MarkFn gamma0;
};

class TerminalCondition {
 public:
  using Kind = std::variant<ConstantTerminal, BrownianLinearTerminal, JumpLinearTerminal,
                            SmoothOfBrownianTerminal, SmoothOfJumpTerminal, WealthLinearTerminal>;

  TerminalCondition() : kind_(ConstantTerminal{0.0}) {}
  explicit TerminalCondition(Kind kind) : kind_(std::move(kind)) {}

  static TerminalCondition constant(double c) { return TerminalCondition(ConstantTerminal{c}); }
  static TerminalCondition brownian_linear(double a, double b) {
    return TerminalCondition(BrownianLinearTerminal{a, b});
  }
  static TerminalCondition jump_linear(MarkFn psi) { return TerminalCondition(JumpLinearTerminal{std::move(psi)}); }
  static TerminalCondition smooth_of_brownian(ScalarFn phi, ScalarFn dphi) {
    return TerminalCondition(SmoothOfBrownianTerminal{std::move(phi), std::move(dphi)});
  }
  static TerminalCondition smooth_of_jump(ScalarFn phi, MarkFn psi) {
    return TerminalCondition(SmoothOfJumpTerminal{std::move(phi), std::move(psi)});
  }

  const Kind& kind() const { return kind_; }
  std::string name() const;
  bool is_constant() const { return std::holds_alternative<ConstantTerminal>(kind_); }

 private:
  Kind kind_;
};

double terminal_value(const TerminalCondition& tc, const PathEnsemble& ens, std::size_t path);
std::vector<double> terminal_values(const TerminalCondition& tc, const PathEnsemble& ens);

// Closed-form Hida-Malliavin derivatives. The value at t = T is the left limit.
double malliavin_b(const TerminalCondition& tc, double t, const PathEnsemble& ens, std::size_t path);
double malliavin_n(const TerminalCondition& tc, double t, std::size_t atom, const PathEnsemble& ens,
                   std::size_t path);

// Caches per-path functionals (B(T), jump sums, terminal wealth) so that
// derivatives along the whole grid cost O(1) per (node, path).
class MalliavinEvaluator {
 public:
  MalliavinEvaluator(const TerminalCondition& tc, const PathEnsemble& ens);
  double value(std::size_t path) const { return values_[path]; }
  double b(double t, std::size_t path) const;
  double n(double t, std::size_t atom, std::size_t path) const;

 private:
  const TerminalCondition* tc_;
  const PathEnsemble* ens_;
  std::vector<double> values_;
  std::vector<double> jump_sum_;
};

// ---------------------------------------------------------------- driver

struct DriverInput {
  std::size_t path;
  std::size_t node;
  double t;
  double y;
  double z;
  std::span<const double> k;     // one entry per atom
  std::span<const double> mean;  // value of the mean functional at this node
};

struct LinearCoefficients {
  TimeFn alpha1 = zero_fn();
  TimeFn alpha2 = zero_fn();
  TimeFn beta1 = zero_fn();
  TimeFn beta2 = zero_fn();
  MarkFn eta1 = zero_mark();
  MarkFn eta2 = zero_mark();
  TimeFn gamma = zero_fn();
  TerminalCondition terminal;

  // Boundedness on the grid and eta1 > -1; throws DomainError otherwise.
  void validate(const TimeGrid& grid, const LevyMeasure& levy) const;
};

struct DriverSpec {
  std::string name;
  std::function<double(const DriverInput&)> eval;
  double lipschitz = 0.0;
  std::size_t mean_dim = 1;
  std::optional<LinearCoefficients> linear_form;
};

struct MeanInput {
  std::size_t path;
  std::size_t node;
  double y;
  double z;
  std::span<const double> k;
};

struct MeanFunctional {
  std::string name;
  std::size_t dim = 1;
  std::function<void(const MeanInput&, std::span<double>)> eval;
  double derivative_bound = 1.0;
};

// phi(y, z, k) = y
MeanFunctional identity_mean();
// phi(y, z, k) = (y, z, k_1, ..., k_J); bound 2 + sqrt(sum_j 1/w_j) in the L2(nu) gradient norm.
MeanFunctional triple_mean(const LevyMeasure& levy);

// f = alpha1 y + alpha2 ybar + beta1 z + beta2 zbar
//     + sum_j (eta1 k_j + eta2 kbar_j) w_j + gamma, paired with triple_mean.
DriverSpec linear_driver(const LinearCoefficients& c, const TimeGrid& grid, const LevyMeasure& levy);

// ---------------------------------------------------------------- solution

class SolutionGrid {
 public:
  SolutionGrid() = default;
  SolutionGrid(const TimeGrid& grid, const LevyMeasure& levy, std::size_t n_paths);

  std::size_t n_paths() const { return n_; }
  std::size_t nodes() const { return nodes_; }
  std::size_t atoms() const { return weights_.size(); }
  const TimeGrid& grid() const { return grid_; }
  const std::vector<double>& weights() const { return weights_; }

  double& y(std::size_t n, std::size_t i) { return y_[i * n_ + n]; }
  double y(std::size_t n, std::size_t i) const { return y_[i * n_ + n]; }
  double& z(std::size_t n, std::size_t i) { return z_[i * n_ + n]; }
  double z(std::size_t n, std::size_t i) const { return z_[i * n_ + n]; }
  double& k(std::size_t n, std::size_t i, std::size_t j) { return k_[(i * atoms() + j) * n_ + n]; }
  double k(std::size_t n, std::size_t i, std::size_t j) const { return k_[(i * atoms() + j) * n_ + n]; }

  std::span<double> y_node(std::size_t i) { return {y_.data() + i * n_, n_}; }
  std::span<const double> y_node(std::size_t i) const { return {y_.data() + i * n_, n_}; }
  std::span<double> z_node(std::size_t i) { return {z_.data() + i * n_, n_}; }
  std::span<const double> z_node(std::size_t i) const { return {z_.data() + i * n_, n_}; }
  std::span<double> k_node(std::size_t i, std::size_t j) { return {k_.data() + (i * atoms() + j) * n_, n_}; }
  std::span<const double> k_node(std::size_t i, std::size_t j) const {
    return {k_.data() + (i * atoms() + j) * n_, n_};
  }

  double ybar(std::size_t i) const { return ybar_[i]; }
  double zbar(std::size_t i) const { return zbar_[i]; }
  double kbar(std::size_t i, std::size_t j) const { return kbar_[i * atoms() + j]; }
  void recompute_means();

  // Pathwise k vector at (n, i), gathered into the caller's buffer.
  void gather_k(std::size_t n, std::size_t i, std::span<double> out) const;

 private:
  TimeGrid grid_;
  std::vector<double> weights_;
  std::size_t n_ = 0;
  std::size_t nodes_ = 0;
  std::vector<double> y_, z_, k_;
  std::vector<double> ybar_, zbar_, kbar_;
};

// E int_0^T e^{beta t}(|Y|^2 + |Z|^2 + sum_j K_j^2 w_j) dt with the left-endpoint rule.
double beta_norm(const SolutionGrid& sol, double beta);
// Same quadrature with weights e^{beta (t - T)}; safe for large beta.
double scaled_beta_norm(const SolutionGrid& sol, double beta);

std::vector<double> mean_functional_eval(const MeanFunctional& phi, const SolutionGrid& sol, std::size_t node);

// ---------------------------------------------------------------- probes

struct ProbeBox {
  double y = 5.0;
  double z = 5.0;
  double k = 5.0;
  double mean = 5.0;
};

struct ProbeReport {
  bool passed = true;
  double worst = 0.0;  // largest observed ratio or derivative norm
  double bound = 0.0;
  std::size_t probes = 0;
  std::string detail;
};

// Randomized check |df| <= C (|dy| + |dz| + ||dk||_{L2(nu)} + |dmu|).
ProbeReport check_lipschitz(const DriverSpec& f, const TimeGrid& grid, const LevyMeasure& levy,
                            const ProbeBox& box = {}, std::size_t n_probes = 1000, std::uint64_t seed = 7);
// sum_i f(t_i, 0, 0, 0, 0)^2 dt finite.
ProbeReport check_square_integrable(const DriverSpec& f, const TimeGrid& grid, const LevyMeasure& levy);
// Finite-difference |d phi/dy| + |d phi/dz| + ||grad_k phi||_{L2(nu)} <= C.
ProbeReport check_derivative_bound(const MeanFunctional& phi, const LevyMeasure& levy, const ProbeBox& box = {},
                                   std::size_t n_probes = 1000, std::uint64_t seed = 11);

// Default beta = 1 + 12 max(C, C')^2.
double default_beta(const DriverSpec& f, const MeanFunctional& phi);

}  // namespace mfbsde
