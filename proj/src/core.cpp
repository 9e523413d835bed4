#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "mfbsde/core.hpp"
#include "mfbsde/errors.hpp"

namespace mfbsde {

void LinearCoefficients::validate(const TimeGrid& grid, const LevyMeasure& levy) const {
  const double bound = 1e12;
  auto check = [&](double v, const char* name, double t) {
    if (!std::isfinite(v) || std::abs(v) > bound) {
      std::ostringstream os;
      os << "coefficient " << name << " is unbounded or non-finite at t = " << t;
      throw DomainError(os.str());
    }
  };
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const double t = grid.time(i);
    check(alpha1(t), "alpha1", t);
    check(alpha2(t), "alpha2", t);
    check(beta1(t), "beta1", t);
    check(beta2(t), "beta2", t);
    check(gamma(t), "gamma", t);
    for (std::size_t j = 0; j < levy.size(); ++j) {
      check(eta1(t, j), "eta1", t);
      check(eta2(t, j), "eta2", t);
    }
  }
  require_tilt_positive(grid, levy, eta1, "linear coefficient eta1");
}

MeanFunctional identity_mean() {
  MeanFunctional phi;
  phi.name = "identity_y";
  phi.dim = 1;
  phi.eval = [](const MeanInput& in, std::span<double> out) { out[0] = in.y; };
  phi.derivative_bound = 1.0;
  return phi;
}

MeanFunctional triple_mean(const LevyMeasure& levy) {
  MeanFunctional phi;
  phi.name = "triple";
  phi.dim = 2 + levy.size();
  phi.eval = [](const MeanInput& in, std::span<double> out) {
    out[0] = in.y;
    out[1] = in.z;
    for (std::size_t j = 0; j < in.k.size(); ++j) out[2 + j] = in.k[j];
  };
  double s = 0.0;
  for (std::size_t j = 0; j < levy.size(); ++j) s += 1.0 / levy.weight(j);
  phi.derivative_bound = 2.0 + std::sqrt(s);
  return phi;
}

DriverSpec linear_driver(const LinearCoefficients& c, const TimeGrid& grid, const LevyMeasure& levy) {
  c.validate(grid, levy);
  const std::vector<double> w = levy.weights();
  DriverSpec f;
  f.name = "linear";
  f.mean_dim = 2 + levy.size();
  f.linear_form = c;
  f.eval = [c, w](const DriverInput& in) {
    double v = c.alpha1(in.t) * in.y + c.alpha2(in.t) * in.mean[0] + c.beta1(in.t) * in.z +
               c.beta2(in.t) * in.mean[1] + c.gamma(in.t);
    for (std::size_t j = 0; j < w.size(); ++j) {
      v += (c.eta1(in.t, j) * in.k[j] + c.eta2(in.t, j) * in.mean[2 + j]) * w[j];
    }
    return v;
  };
  double C = 0.0;
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const double t = grid.time(i);
    double e1 = 0.0, m2 = c.alpha2(t) * c.alpha2(t) + c.beta2(t) * c.beta2(t);
    for (std::size_t j = 0; j < w.size(); ++j) {
      e1 += c.eta1(t, j) * c.eta1(t, j) * w[j];
      m2 += std::pow(c.eta2(t, j) * w[j], 2);
    }
    C = std::max({C, std::abs(c.alpha1(t)), std::abs(c.beta1(t)), std::sqrt(e1), std::sqrt(m2)});
  }
  f.lipschitz = C;
  return f;
}

SolutionGrid::SolutionGrid(const TimeGrid& grid, const LevyMeasure& levy, std::size_t n_paths)
    : grid_(grid), weights_(levy.weights()), n_(n_paths), nodes_(grid.nodes()) {
  y_.assign(n_ * nodes_, 0.0);
  z_.assign(n_ * nodes_, 0.0);
  k_.assign(n_ * nodes_ * atoms(), 0.0);
  ybar_.assign(nodes_, 0.0);
  zbar_.assign(nodes_, 0.0);
  kbar_.assign(nodes_ * atoms(), 0.0);
}

namespace {
double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}
}  // namespace

void SolutionGrid::recompute_means() {
  for (std::size_t i = 0; i < nodes_; ++i) {
    ybar_[i] = mean_of(y_node(i));
    zbar_[i] = mean_of(z_node(i));
    for (std::size_t j = 0; j < atoms(); ++j) kbar_[i * atoms() + j] = mean_of(k_node(i, j));
  }
}

void SolutionGrid::gather_k(std::size_t n, std::size_t i, std::span<double> out) const {
  for (std::size_t j = 0; j < atoms(); ++j) out[j] = k(n, i, j);
}

namespace {
double weighted_norm(const SolutionGrid& sol, double beta, double shift) {
  const TimeGrid& g = sol.grid();
  double total = 0.0;
  for (std::size_t i = 0; i < g.steps(); ++i) {
    double s = 0.0;
    for (std::size_t n = 0; n < sol.n_paths(); ++n) {
      double v = sol.y(n, i) * sol.y(n, i) + sol.z(n, i) * sol.z(n, i);
      for (std::size_t j = 0; j < sol.atoms(); ++j) v += sol.k(n, i, j) * sol.k(n, i, j) * sol.weights()[j];
      s += v;
    }
    total += std::exp(beta * (g.time(i) - shift)) * s / static_cast<double>(sol.n_paths()) * g.dt();
  }
  return total;
}
}  // namespace

double beta_norm(const SolutionGrid& sol, double beta) {
  if (beta < 0.0) throw ConfigError("beta must be non-negative");
  return weighted_norm(sol, beta, 0.0);
}

double scaled_beta_norm(const SolutionGrid& sol, double beta) {
  if (beta < 0.0) throw ConfigError("beta must be non-negative");
  return weighted_norm(sol, beta, sol.grid().horizon());
}

std::vector<double> mean_functional_eval(const MeanFunctional& phi, const SolutionGrid& sol, std::size_t node) {
  std::vector<double> acc(phi.dim, 0.0), buf(phi.dim), k(sol.atoms());
  for (std::size_t n = 0; n < sol.n_paths(); ++n) {
    sol.gather_k(n, node, k);
    phi.eval(MeanInput{n, node, sol.y(n, node), sol.z(n, node), k}, buf);
    for (std::size_t d = 0; d < phi.dim; ++d) acc[d] += buf[d];
  }
  for (double& a : acc) a /= static_cast<double>(sol.n_paths());
  return acc;
}

ProbeReport check_lipschitz(const DriverSpec& f, const TimeGrid& grid, const LevyMeasure& levy,
                            const ProbeBox& box, std::size_t n_probes, std::uint64_t seed) {
  CounterStream rng(seed, 0, 0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<std::size_t> node(0, grid.steps());
  const std::size_t J = levy.size();
  std::vector<double> k1(J), k2(J), m1(f.mean_dim), m2(f.mean_dim);
  ProbeReport rep;
  rep.bound = f.lipschitz;
  for (std::size_t p = 0; p < n_probes; ++p) {
    const std::size_t i = node(rng);
    const double t = grid.time(i);
    const double y1 = box.y * u(rng), y2 = box.y * u(rng);
    const double z1 = box.z * u(rng), z2 = box.z * u(rng);
    double dk = 0.0, dm = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      k1[j] = box.k * u(rng);
      k2[j] = box.k * u(rng);
      dk += (k1[j] - k2[j]) * (k1[j] - k2[j]) * levy.weight(j);
    }
    for (std::size_t d = 0; d < f.mean_dim; ++d) {
      m1[d] = box.mean * u(rng);
      m2[d] = box.mean * u(rng);
      dm += (m1[d] - m2[d]) * (m1[d] - m2[d]);
    }
    const double denom = std::abs(y1 - y2) + std::abs(z1 - z2) + std::sqrt(dk) + std::sqrt(dm);
    if (denom == 0.0) continue;
    const double f1 = f.eval(DriverInput{0, i, t, y1, z1, k1, m1});
    const double f2 = f.eval(DriverInput{0, i, t, y2, z2, k2, m2});
    const double ratio = std::abs(f1 - f2) / denom;
    ++rep.probes;
    if (ratio > rep.worst) {
      rep.worst = ratio;
      std::ostringstream os;
      os << "t=" << t << " y=(" << y1 << "," << y2 << ") z=(" << z1 << "," << z2 << ")";
      rep.detail = os.str();
    }
  }
  rep.passed = rep.worst <= f.lipschitz * (1.0 + 1e-9) + 1e-12;
  return rep;
}

ProbeReport check_square_integrable(const DriverSpec& f, const TimeGrid& grid, const LevyMeasure& levy) {
  std::vector<double> k(levy.size(), 0.0), m(f.mean_dim, 0.0);
  ProbeReport rep;
  double s = 0.0;
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const double v = f.eval(DriverInput{0, i, grid.time(i), 0.0, 0.0, k, m});
    s += v * v * grid.dt();
    ++rep.probes;
  }
  rep.worst = s;
  rep.bound = std::numeric_limits<double>::infinity();
  rep.passed = std::isfinite(s);
  return rep;
}

ProbeReport check_derivative_bound(const MeanFunctional& phi, const LevyMeasure& levy, const ProbeBox& box,
                                   std::size_t n_probes, std::uint64_t seed) {
  CounterStream rng(seed, 0, 0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t J = levy.size();
  const std::size_t d = phi.dim;
  const double h = 1e-5;
  std::vector<double> k(J), kp(J), a(d), b(d);
  ProbeReport rep;
  rep.bound = phi.derivative_bound;
  auto diff = [&](double y1, double z1, std::span<const double> k1, double y2, double z2,
                  std::span<const double> k2) {
    phi.eval(MeanInput{0, 0, y1, z1, k1}, a);
    phi.eval(MeanInput{0, 0, y2, z2, k2}, b);
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += std::pow((a[c] - b[c]) / (2.0 * h), 2);
    return s;
  };
  for (std::size_t p = 0; p < n_probes; ++p) {
    const double y = box.y * u(rng), z = box.z * u(rng);
    for (std::size_t j = 0; j < J; ++j) k[j] = box.k * u(rng);
    const double dy = std::sqrt(diff(y + h, z, k, y - h, z, k));
    const double dz = std::sqrt(diff(y, z + h, k, y, z - h, k));
    double dk = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      kp = k;
      kp[j] = k[j] + h;
      std::vector<double> km = k;
      km[j] = k[j] - h;
      dk += diff(y, z, kp, y, z, km) / levy.weight(j);
    }
    const double total = dy + dz + std::sqrt(dk);
    ++rep.probes;
    if (total > rep.worst) {
      rep.worst = total;
      std::ostringstream os;
      os << "y=" << y << " z=" << z;
      rep.detail = os.str();
    }
  }
  rep.passed = rep.worst <= phi.derivative_bound * (1.0 + 1e-6) + 1e-9;
  return rep;
}

double default_beta(const DriverSpec& f, const MeanFunctional& phi) {
  const double c = std::max(f.lipschitz, phi.derivative_bound);
  return 1.0 + 12.0 * c * c;
}

}  // namespace mfbsde
