#include "mfbsde/regression.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "mfbsde/errors.hpp"

namespace mfbsde {

namespace {

void monomials(std::size_t vars, int degree, std::vector<std::vector<int>>& out) {
  std::vector<int> e(vars, 0);
  std::function<void(std::size_t, int)> rec = [&](std::size_t v, int left) {
    if (v == vars) {
      int total = 0;
      for (int x : e) total += x;
      if (total >= 1) out.push_back(e);
      return;
    }
    for (int p = 0; p <= left; ++p) {
      e[v] = p;
      rec(v + 1, left - p);
    }
    e[v] = 0;
  };
  rec(0, degree);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    int sa = 0, sb = 0;
    for (int x : a) sa += x;
    for (int x : b) sb += x;
    return sa < sb;
  });
}

bool all_equal(std::span<const double> v) {
  for (double x : v) {
    if (x != v[0]) return false;
  }
  return true;
}

}  // namespace

ConditionalExpectation::ConditionalExpectation(const PathEnsemble& ens, RegressionBasis basis,
                                               std::shared_ptr<const std::vector<double>> wealth)
    : ens_(&ens), basis_(basis), wealth_(std::move(wealth)) {
  if (basis_.degree < 0) throw ConfigError("regression degree must be non-negative");
  const std::size_t N = ens.n_paths();
  const std::size_t nodes = ens.grid().nodes();
  if (basis_.wealth && (!wealth_ || wealth_->size() != N * nodes)) {
    throw ConfigError("wealth features requested without a matching wealth field");
  }
  const std::size_t vars = 1 + ens.atoms();
  monomials(vars, basis_.degree, exponents_);
  for (const auto& e : exponents_) {
    std::string name;
    for (std::size_t v = 0; v < vars; ++v) {
      if (e[v] == 0) continue;
      if (!name.empty()) name += "*";
      name += v == 0 ? "B" : "S" + std::to_string(v);
      if (e[v] > 1) name += "^" + std::to_string(e[v]);
    }
    names_.push_back(name);
  }
  if (basis_.wealth) {
    names_.push_back("X");
    names_.push_back("lnX");
  }
  const std::size_t p_full = names_.size();
  if (N <= p_full + 1) throw ConfigError("regression needs more paths than basis functions");

  nodes_.resize(nodes);
  Eigen::MatrixXd raw;
  for (std::size_t i = 0; i < nodes; ++i) {
    raw_features(i, raw);
    NodeStats& s = nodes_[i];
    const Eigen::VectorXd mean = raw.colwise().mean();
    std::vector<double> scales;
    for (std::size_t c = 0; c < p_full; ++c) {
      const double var = (raw.col(c).array() - mean(c)).square().mean();
      const double sd = std::sqrt(var);
      if (sd > 1e-12 * std::max(1.0, std::abs(mean(c)))) {
        s.active.push_back(c);
        scales.push_back(sd);
      }
    }
    const std::size_t p = s.active.size();
    s.mean.resize(p);
    s.scale.resize(p);
    for (std::size_t a = 0; a < p; ++a) {
      s.mean(a) = mean(s.active[a]);
      s.scale(a) = scales[a];
    }
    if (p == 0) continue;
    Eigen::MatrixXd x(N, p);
    for (std::size_t a = 0; a < p; ++a) {
      x.col(a) = (raw.col(s.active[a]).array() - s.mean(a)) / s.scale(a);
    }
    s.gram = x.transpose() * x;
    s.ridge = basis_.ridge_factor * s.gram.trace() / static_cast<double>(p);
    Eigen::MatrixXd reg = s.gram;
    reg.diagonal().array() += s.ridge;
    s.chol.compute(reg);
    if (s.chol.info() != Eigen::Success) {
      throw NumericalError("regression normal matrix is rank deficient at node " + std::to_string(i));
    }
  }
}

void ConditionalExpectation::raw_features(std::size_t node, Eigen::MatrixXd& out) const {
  const PathEnsemble& ens = *ens_;
  const std::size_t N = ens.n_paths();
  const std::size_t J = ens.atoms();
  out.resize(N, names_.size());
  std::vector<double> v(1 + J);
  for (std::size_t n = 0; n < N; ++n) {
    v[0] = ens.brownian(n, node);
    for (std::size_t j = 0; j < J; ++j) v[1 + j] = ens.compensated_sum_p(n, node, j);
    for (std::size_t c = 0; c < exponents_.size(); ++c) {
      double m = 1.0;
      for (std::size_t k = 0; k < v.size(); ++k) {
        for (int r = 0; r < exponents_[c][k]; ++r) m *= v[k];
      }
      out(n, c) = m;
    }
    if (basis_.wealth) {
      const double x = (*wealth_)[node * N + n];
      out(n, exponents_.size()) = x;
      out(n, exponents_.size() + 1) = std::log(x);
    }
  }
}

Eigen::MatrixXd ConditionalExpectation::standardized(std::size_t node) const {
  const NodeStats& s = nodes_[node];
  Eigen::MatrixXd raw;
  raw_features(node, raw);
  Eigen::MatrixXd x(raw.rows(), s.active.size());
  for (std::size_t a = 0; a < s.active.size(); ++a) {
    x.col(a) = (raw.col(s.active[a]).array() - s.mean(a)) / s.scale(a);
  }
  return x;
}

void ConditionalExpectation::project(std::size_t node, std::span<const double> target, std::span<double> out) const {
  project_many(node, {target}, {out});
}

void ConditionalExpectation::project_many(std::size_t node, const std::vector<std::span<const double>>& targets,
                                          const std::vector<std::span<double>>& outs) const {
  const std::size_t N = ens_->n_paths();
  const NodeStats& s = nodes_.at(node);
  std::vector<std::size_t> todo;
  for (std::size_t q = 0; q < targets.size(); ++q) {
    if (targets[q].size() != N || outs[q].size() != N) throw ConfigError("regression target has wrong length");
    double m = 0.0;
    for (double t : targets[q]) m += t;
    m /= static_cast<double>(N);
    if (all_equal(targets[q])) {
      std::fill(outs[q].begin(), outs[q].end(), targets[q][0]);
    } else if (s.active.empty()) {
      std::fill(outs[q].begin(), outs[q].end(), m);
    } else {
      todo.push_back(q);
    }
  }
  if (todo.empty()) return;
  const Eigen::MatrixXd x = standardized(node);
  Eigen::MatrixXd rhs(N, todo.size());
  Eigen::VectorXd means(todo.size());
  for (std::size_t c = 0; c < todo.size(); ++c) {
    rhs.col(c) = Eigen::Map<const Eigen::VectorXd>(targets[todo[c]].data(), N);
    means(c) = rhs.col(c).mean();
  }
  const Eigen::MatrixXd coef = s.chol.solve(x.transpose() * rhs);
  const Eigen::MatrixXd fitted = x * coef;
  for (std::size_t c = 0; c < todo.size(); ++c) {
    auto& o = outs[todo[c]];
    for (std::size_t n = 0; n < N; ++n) o[n] = means(c) + fitted(n, c);
  }
}

RegressionFit ConditionalExpectation::fit(std::size_t node, std::span<const double> target) const {
  const std::size_t N = ens_->n_paths();
  const NodeStats& s = nodes_.at(node);
  const std::size_t p = s.active.size();
  const Eigen::Map<const Eigen::VectorXd> y(target.data(), N);
  const double ybar = y.mean();
  RegressionFit out;
  out.names.push_back("1");
  if (p == 0) {
    const double var = (y.array() - ybar).square().sum() / static_cast<double>(N - 1);
    out.coefficients.push_back(ybar);
    out.standard_errors.push_back(std::sqrt(var / static_cast<double>(N)));
    return out;
  }
  const Eigen::MatrixXd x = standardized(node);
  const Eigen::VectorXd b = s.chol.solve(x.transpose() * y);
  const Eigen::VectorXd resid = (y.array() - ybar).matrix() - x * b;
  const double s2 = resid.squaredNorm() / static_cast<double>(N - p - 1);
  Eigen::MatrixXd reg = s.gram;
  reg.diagonal().array() += s.ridge;
  const Eigen::MatrixXd cov = s2 * reg.inverse();
  double intercept = ybar;
  Eigen::VectorXd b_orig = b.array() / s.scale.array();
  for (std::size_t a = 0; a < p; ++a) intercept -= b_orig(a) * s.mean(a);
  // intercept variance: s2/N from the centered mean plus the slope part
  Eigen::VectorXd g = -(s.mean.array() / s.scale.array()).matrix();
  const double var_int = s2 / static_cast<double>(N) + g.dot(cov * g);
  out.coefficients.push_back(intercept);
  out.standard_errors.push_back(std::sqrt(var_int));
  for (std::size_t a = 0; a < p; ++a) {
    out.names.push_back(names_[s.active[a]]);
    out.coefficients.push_back(b_orig(a));
    out.standard_errors.push_back(std::sqrt(cov(a, a)) / s.scale(a));
  }
  return out;
}

}  // namespace mfbsde
