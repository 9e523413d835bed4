#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mfbsde/levy_paths.hpp"

namespace mfbsde {

// Features at node i: all monomials of total degree 1..degree in B(t_i) and
// the running compensated jump sums, plus X(t_i) and ln X(t_i) when a wealth
// field is attached. The intercept is always present and never penalized.
struct RegressionBasis {
  int degree = 2;
  bool wealth = false;
  double ridge_factor = 1e-8;
};

struct RegressionFit {
  std::vector<std::string> names;  // "1" first
  std::vector<double> coefficients;
  std::vector<double> standard_errors;
};

// Least-squares estimator of E[. | F_{t_i}] with a ridge term
// ridge_factor * trace(G) / p on the standardized normal matrix G.
class ConditionalExpectation {
 public:
  // wealth: node-major field X(n, i) at index i * n_paths + n, required iff basis.wealth.
  ConditionalExpectation(const PathEnsemble& ens, RegressionBasis basis,
                         std::shared_ptr<const std::vector<double>> wealth = nullptr);

  void project(std::size_t node, std::span<const double> target, std::span<double> out) const;
  void project_many(std::size_t node, const std::vector<std::span<const double>>& targets,
                    const std::vector<std::span<double>>& outs) const;
  RegressionFit fit(std::size_t node, std::span<const double> target) const;

  const PathEnsemble& ensemble() const { return *ens_; }
  const RegressionBasis& basis() const { return basis_; }
  std::size_t feature_count() const { return names_.size(); }
  std::size_t active_features(std::size_t node) const { return nodes_[node].active.size(); }
  double ridge(std::size_t node) const { return nodes_[node].ridge; }
  const std::vector<std::string>& feature_names() const { return names_; }

 private:
  struct NodeStats {
    std::vector<std::size_t> active;  // indices into the full feature list
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;
    Eigen::LLT<Eigen::MatrixXd> chol;
    Eigen::MatrixXd gram;
    double ridge = 0.0;
  };

  void raw_features(std::size_t node, Eigen::MatrixXd& out) const;
  Eigen::MatrixXd standardized(std::size_t node) const;

  const PathEnsemble* ens_;
  RegressionBasis basis_;
  std::shared_ptr<const std::vector<double>> wealth_;
  std::vector<std::vector<int>> exponents_;  // per polynomial feature, exponent of each variable
  std::vector<std::string> names_;
  std::vector<NodeStats> nodes_;
};

}  // namespace mfbsde
