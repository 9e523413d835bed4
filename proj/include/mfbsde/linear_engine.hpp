#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mfbsde/core.hpp"
#include "mfbsde/levy_paths.hpp"

namespace mfbsde {

// Doleans exponential Gamma(t_i, t_l) of (alpha1, beta1, eta1), stored as one
// running exponential G per path so that Gamma(t_i, t_l) = G_l / G_i.
class GammaEnsemble {
 public:
  GammaEnsemble() = default;
  GammaEnsemble(std::size_t n_paths, std::size_t nodes) : n_(n_paths), g_(n_paths * nodes, 1.0) {}

  double operator()(std::size_t n, std::size_t i, std::size_t l) const {
    return g_[l * n_ + n] / g_[i * n_ + n];
  }
  double from_zero(std::size_t n, std::size_t i) const { return g_[i * n_ + n]; }
  double& running(std::size_t n, std::size_t i) { return g_[i * n_ + n]; }
  std::size_t n_paths() const { return n_; }

 private:
  std::size_t n_ = 0;
  std::vector<double> g_;
};

GammaEnsemble simulate_gamma(const LinearCoefficients& coeffs, const PathEnsemble& ens);

// exp of the left-endpoint sum of alpha1 over [t_i, t_l]; the exact mean of
// the discretized Gamma.
double mean_gamma(const LinearCoefficients& coeffs, const TimeGrid& grid, std::size_t i, std::size_t l);

// kRepresentation: Zbar(t) = E[D_t xi Gamma(t,T)] and Kbar(t) = E[D_{t,zeta} xi Gamma(t,T)]
// (plus running-term sensitivities); only the Ybar row carries the kernel.
// kScaledRows: the Zbar/Kbar rows repeat the Ybar row scaled by beta1(t) / eta1(t, zeta).
enum class MeanSystemForm { kRepresentation, kScaledRows };

// Expectations of the running term gamma needed by the mean system. The
// deterministic case is E[Gamma] gamma(t_l) with zero sensitivities.
struct RunningTerm {
  std::function<double(std::size_t i, std::size_t l)> weighted_mean;        // E[Gamma(t_i,t_l) gamma(t_l)]
  std::function<double(std::size_t i, std::size_t l)> brownian_sensitivity;  // E[D_{t_i} gamma(t_l) Gamma(t_i,t_l)]
  std::function<double(std::size_t i, std::size_t l, std::size_t j)> jump_sensitivity;
  std::function<double(std::size_t n, std::size_t i)> pathwise;             // gamma(t_i) on path n
};

RunningTerm deterministic_running_term(const LinearCoefficients& coeffs, const TimeGrid& grid);

// Unknown V stacked block-wise: block 0 = Ybar, 1 = Zbar, 2 + j = Kbar_j,
// each over nodes 0..M. Trapezoid weights in s.
struct VolterraSystem {
  TimeGrid grid;
  std::vector<double> weights;
  MeanSystemForm form = MeanSystemForm::kRepresentation;
  Eigen::MatrixXd kernel;
  Eigen::VectorXd source;
  Eigen::VectorXd source_se;

  std::size_t blocks() const { return 2 + weights.size(); }
  std::size_t size() const { return blocks() * grid.nodes(); }
  std::size_t index(std::size_t block, std::size_t node) const { return block * grid.nodes() + node; }
};

VolterraSystem assemble_system(const LinearCoefficients& coeffs, const PathEnsemble& ens, const GammaEnsemble& gamma,
                               MeanSystemForm form = MeanSystemForm::kRepresentation,
                               const RunningTerm* running = nullptr);

struct MeanVector {
  std::vector<double> ybar;
  std::vector<double> zbar;
  std::vector<std::vector<double>> kbar;  // [atom][node]

  static MeanVector from_stacked(const Eigen::VectorXd& v, std::size_t nodes, std::size_t atoms);
  Eigen::VectorXd stacked() const;
};

// Norm of the kernel restricted to nodes first..last, induced by the inner
// product sum_i dt (u0 v0 + u1 v1 + sum_j w_j u_j v_j). Power iteration.
double operator_norm_estimate(const VolterraSystem& sys, std::size_t first, std::size_t last);

struct NeumannOptions {
  double target_norm = 0.5;
  double series_tol = 1e-12;
  std::size_t max_window_nodes = 0;  // 0: no cap beyond the norm target
  int max_terms = 100000;
};

struct NeumannReport {
  std::vector<std::pair<std::size_t, std::size_t>> windows;  // node ranges, right to left
  std::vector<double> norms;
  std::vector<int> terms;
};

MeanVector neumann_solve(const VolterraSystem& sys, const NeumannOptions& opts = {}, NeumannReport* report = nullptr);
MeanVector direct_solve(const VolterraSystem& sys);

struct ClosedFormResult {
  double y0 = 0.0;
  double se = 0.0;
  std::vector<double> ybar;
};

ClosedFormResult y_closed_formula(const LinearCoefficients& coeffs, const PathEnsemble& ens,
                                  const GammaEnsemble& gamma, const MeanVector& v,
                                  const RunningTerm* running = nullptr);

// Linear BSDE with mean term alpha2 E_Q[Y] (coefficients: alpha1, alpha2, beta1, eta1, gamma).
struct QSpecialResult {
  double y0_weighted = 0.0;
  double se_weighted = 0.0;
  double y0_shifted = 0.0;
  double se_shifted = 0.0;
  double eq_xi_weighted = 0.0;
  double eq_xi_shifted = 0.0;
  std::vector<double> eq_y;  // E_Q[Y(t_i)] from the weighted estimate
  double discrepancy_z = 0.0;  // |difference| / combined SE
};

QSpecialResult q_special_solve(const LinearCoefficients& coeffs, const PathEnsemble& ens);

// Trapezoid weights of the integral over [t_i, T] at node l >= i.
double trapezoid_tail_weight(const TimeGrid& grid, std::size_t i, std::size_t l);

}  // namespace mfbsde
