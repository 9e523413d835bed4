#include "mfbsde/recursive_utility.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mfbsde/errors.hpp"

namespace mfbsde {

namespace {

void require_finite(const TimeFn& f, const TimeGrid& grid, const char* name) {
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    if (!std::isfinite(f(grid.time(i)))) {
      std::ostringstream os;
      os << name << " is not finite at t = " << grid.time(i);
      throw DomainError(os.str());
    }
  }
}

void require_above(const MarkFn& f, const TimeGrid& grid, const LevyMeasure& levy, double floor, bool strict,
                   const char* name) {
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    for (std::size_t j = 0; j < levy.size(); ++j) {
      const double v = f(grid.time(i), j);
      if (!std::isfinite(v) || (strict ? v <= floor : v < floor)) {
        std::ostringstream os;
        os << name << " = " << v << " violates the lower bound " << floor << " at (t = " << grid.time(i)
           << ", zeta = " << levy.marks()[j] << ")";
        throw DomainError(os.str());
      }
    }
  }
}

std::vector<double> theta_values(const TerminalCondition& theta, const PathEnsemble& ens) {
  if (!theta.is_constant() && !std::holds_alternative<SmoothOfBrownianTerminal>(theta.kind())) {
    throw ConfigError("theta must be a constant or a smooth function of B(T)");
  }
  std::vector<double> v = terminal_values(theta, ens);
  for (std::size_t n = 0; n < v.size(); ++n) {
    if (!(v[n] > 0.0)) {
      std::ostringstream os;
      os << "theta must be positive; got " << v[n] << " on path " << n;
      throw DomainError(os.str());
    }
  }
  return v;
}

std::vector<double> lambda_means(const UtilityCoefficients& uc, const TimeGrid& grid) {
  std::vector<double> m(grid.nodes(), 1.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    acc += (uc.alpha0(grid.time(i)) + uc.alpha1(grid.time(i))) * grid.dt();
    m[i + 1] = std::exp(acc);
  }
  return m;
}

}  // namespace

void WealthParams::validate(const TimeGrid& grid, const LevyMeasure& levy) const {
  if (!(x0 > 0.0) || !std::isfinite(x0)) throw ConfigError("initial wealth x0 must be positive");
  require_finite(b0, grid, "b0");
  require_finite(sigma0, grid, "sigma0");
  require_above(gamma0, grid, levy, -1.0, true, "gamma0");
}

void UtilityCoefficients::validate(const TimeGrid& grid, const LevyMeasure& levy) const {
  require_finite(alpha0, grid, "alpha0");
  require_finite(alpha1, grid, "alpha1");
  require_finite(beta0, grid, "beta0");
  require_finite(beta1, grid, "beta1");
  require_above(eta0, grid, levy, -1.0, true, "eta0");
  require_above(eta1, grid, levy, -1.0, false, "eta1");
  if (const auto* c = std::get_if<ConstantTerminal>(&theta.kind()); c && !(c->value > 0.0)) {
    throw DomainError("theta must be positive");
  }
}

ControlProcess ControlProcess::deterministic(std::vector<double> per_node) {
  ControlProcess c;
  c.nodes_ = per_node.size();
  c.v_ = std::move(per_node);
  return c;
}

ControlProcess ControlProcess::constant(double value, std::size_t nodes) {
  return deterministic(std::vector<double>(nodes, value));
}

ControlProcess ControlProcess::adapted(std::size_t n_paths, std::size_t nodes, std::vector<double> node_major) {
  if (node_major.size() != n_paths * nodes) throw ConfigError("adapted control has the wrong size");
  ControlProcess c;
  c.adapted_ = true;
  c.n_ = n_paths;
  c.nodes_ = nodes;
  c.v_ = std::move(node_major);
  return c;
}

const std::vector<double>& ControlProcess::node_values() const {
  if (adapted_) throw CapabilityError("node_values() needs a deterministic control");
  return v_;
}

void ControlProcess::validate(const TimeGrid& grid, std::size_t n_paths) const {
  if (nodes_ != grid.nodes()) throw ConfigError("control does not match the grid");
  if (adapted_ && n_ != n_paths) throw ConfigError("adapted control does not match the ensemble");
  for (double v : v_) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("consumption rate must be finite and >= 0");
  }
}

std::shared_ptr<const std::vector<double>> WealthGrid::terminal() const {
  const std::size_t M = nodes - 1;
  return std::make_shared<const std::vector<double>>(values->begin() + static_cast<std::ptrdiff_t>(M * n_paths),
                                                     values->end());
}

WealthGrid simulate_wealth(const WealthParams& wp, const ControlProcess& pi, const PathEnsemble& ens) {
  const TimeGrid& grid = ens.grid();
  const LevyMeasure& levy = ens.levy();
  wp.validate(grid, levy);
  pi.validate(grid, ens.n_paths());
  const std::size_t N = ens.n_paths();
  const std::size_t M = grid.steps();
  const std::size_t J = levy.size();
  const double dt = grid.dt();
  const std::vector<double> w = levy.weights();
  std::vector<double> drift(M), sig(M), lj(M * J);
  for (std::size_t i = 0; i < M; ++i) {
    const double t = grid.time(i);
    sig[i] = wp.sigma0(t);
    double d = (wp.b0(t) - 0.5 * sig[i] * sig[i]) * dt;
    for (std::size_t j = 0; j < J; ++j) {
      const double g = wp.gamma0(t, j);
      lj[i * J + j] = std::log1p(g);
      d -= g * w[j] * dt;
    }
    drift[i] = d;
  }
  auto values = std::make_shared<std::vector<double>>(N * (M + 1));
  const double lx0 = std::log(wp.x0);
#pragma omp parallel for schedule(static)
  for (long long nn = 0; nn < static_cast<long long>(N); ++nn) {
    const auto n = static_cast<std::size_t>(nn);
    double lx = lx0;
    (*values)[n] = wp.x0;
    for (std::size_t i = 0; i < M; ++i) {
      lx += drift[i] - pi(n, i) * dt + sig[i] * ens.db(n, i);
      for (std::size_t j = 0; j < J; ++j) lx += lj[i * J + j] * ens.jumps(n, i, j);
      (*values)[(i + 1) * N + n] = std::exp(lx);
    }
  }
  WealthGrid g;
  g.values = std::move(values);
  g.n_paths = N;
  g.nodes = M + 1;
  return g;
}

std::vector<double> adjoint_p(const TerminalCondition& theta, const ConditionalExpectation& cexp) {
  const PathEnsemble& ens = cexp.ensemble();
  const std::size_t N = ens.n_paths();
  const std::size_t M = ens.grid().steps();
  const std::vector<double> th = theta_values(theta, ens);
  std::vector<double> p(N * (M + 1));
  if (const auto* c = std::get_if<ConstantTerminal>(&theta.kind())) {
    std::fill(p.begin(), p.end(), c->value);
    return p;
  }
  std::copy(th.begin(), th.end(), p.begin() + static_cast<std::ptrdiff_t>(M * N));
  for (std::size_t i = 0; i < M; ++i) {
    cexp.project(i, th, std::span<double>(p.data() + i * N, N));
  }
  return p;
}

LambdaState adjoint_lambda(const UtilityCoefficients& uc, const PathEnsemble& ens) {
  const TimeGrid& grid = ens.grid();
  const LevyMeasure& levy = ens.levy();
  uc.validate(grid, levy);
  const std::size_t N = ens.n_paths();
  const std::size_t M = grid.steps();
  const std::size_t J = levy.size();
  const double dt = grid.dt();
  const std::vector<double> w = levy.weights();

  LambdaState s;
  s.n_paths = N;
  s.mean = lambda_means(uc, grid);
  s.lambda.assign(N * (M + 1), 1.0);
  s.upsilon.assign(N * (M + 1), 1.0);
  s.euler.assign(N * (M + 1), 1.0);

  struct Step {
    double a0, b0, b1, log_drift, mean_drift;
  };
  std::vector<Step> st(M);
  std::vector<double> e0(M * J), e1(M * J), l0(M * J);
  for (std::size_t i = 0; i < M; ++i) {
    const double t = grid.time(i);
    Step& x = st[i];
    x.a0 = uc.alpha0(t);
    x.b0 = uc.beta0(t);
    x.b1 = uc.beta1(t);
    x.log_drift = (x.a0 - 0.5 * x.b0 * x.b0) * dt;
    // exp(alpha1 dt) - 1 keeps the discrete mean equal to s.mean exactly
    x.mean_drift = std::expm1(uc.alpha1(t) * dt) - x.b0 * x.b1 * dt;
    for (std::size_t j = 0; j < J; ++j) {
      const double a = uc.eta0(t, j), b = uc.eta1(t, j);
      e0[i * J + j] = a;
      e1[i * J + j] = b;
      l0[i * J + j] = std::log1p(a);
      x.log_drift -= a * w[j] * dt;
      x.mean_drift += (1.0 / (1.0 + a) - 1.0) * b * w[j] * dt;
    }
  }
#pragma omp parallel for schedule(static)
  for (long long nn = 0; nn < static_cast<long long>(N); ++nn) {
    const auto n = static_cast<std::size_t>(nn);
    double lphi = 0.0, integral = 0.0, eul = 1.0;
    for (std::size_t i = 0; i < M; ++i) {
      const Step& x = st[i];
      const double dw = ens.db(n, i);
      const double ups = std::exp(-lphi);
      const double m = s.mean[i];
      double jump_int = 0.0, jump_eul = 0.0;
      for (std::size_t j = 0; j < J; ++j) {
        const double dn = ens.compensated_p(n, i, j);
        jump_int += e1[i * J + j] / (1.0 + e0[i * J + j]) * dn;
        jump_eul += (e0[i * J + j] * eul + e1[i * J + j] * m) * dn;
      }
      integral += ups * m * (x.mean_drift + x.b1 * dw + jump_int);
      eul += (x.a0 * eul + uc.alpha1(grid.time(i)) * m) * dt + (x.b0 * eul + x.b1 * m) * dw + jump_eul;
      lphi += x.b0 * dw + x.log_drift;
      for (std::size_t j = 0; j < J; ++j) lphi += l0[i * J + j] * ens.jumps(n, i, j);
      const std::size_t k = (i + 1) * N + n;
      s.upsilon[k] = std::exp(-lphi);
      s.lambda[k] = std::exp(lphi) * (1.0 + integral);
      s.euler[k] = eul;
    }
  }
  return s;
}

AdjointState optimal_pi(const UtilityCoefficients& uc, const ConditionalExpectation& cexp) {
  AdjointState a;
  a.p = adjoint_p(uc.theta, cexp);
  a.lambda = adjoint_lambda(uc, cexp.ensemble());
  a.pi_hat.resize(a.p.size());
  for (std::size_t k = 0; k < a.p.size(); ++k) {
    double p = a.p[k];
    if (p < kPFloor) {
      p = kPFloor;
      ++a.floored;
    }
    a.pi_hat[k] = a.lambda.lambda[k] / p;
  }
  return a;
}

DeterministicOptimum optimal_deterministic_pi(const WealthParams& wp, const UtilityCoefficients& uc,
                                              const PathEnsemble& ens) {
  const TimeGrid& grid = ens.grid();
  const std::size_t M = grid.steps();
  const std::size_t N = ens.n_paths();
  const WealthGrid x0 = simulate_wealth(wp, ControlProcess::constant(0.0, M + 1), ens);
  const LambdaState lam = adjoint_lambda(uc, ens);
  const std::vector<double> th = theta_values(uc.theta, ens);
  double c = 0.0;
  for (std::size_t n = 0; n < N; ++n) c += lam.at(n, M) * th[n] * x0(n, M);
  c /= static_cast<double>(N);

  DeterministicOptimum out;
  out.mean_lambda = lam.mean;
  out.terminal_moment = c;
  std::vector<double> tail(M + 1, 0.0);
  for (std::size_t i = 0; i <= M; ++i) {
    for (std::size_t l = i; l <= M; ++l) tail[i] += trapezoid_tail_weight(grid, i, l) * lam.mean[l];
  }
  auto control = [&](double S) {
    std::vector<double> pi(M + 1);
    for (std::size_t i = 0; i <= M; ++i) pi[i] = lam.mean[i] / (c * std::exp(-S) + tail[i]);
    return pi;
  };
  auto total = [&](const std::vector<double>& pi) {
    double s = 0.0;
    for (std::size_t i = 0; i < M; ++i) s += pi[i] * grid.dt();
    return s;
  };
  double lo = 0.0;
  double hi = 0.0;
  for (std::size_t i = 0; i < M; ++i) hi += lam.mean[i] / tail[i] * grid.dt();
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (total(control(mid)) > mid) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double S = 0.5 * (lo + hi);
  out.total_consumption = S;
  std::vector<double> pi = control(S);
  out.scaled_p.resize(M + 1);
  for (std::size_t i = 0; i <= M; ++i) out.scaled_p[i] = c * std::exp(-S) + tail[i];
  out.pi = ControlProcess::deterministic(std::move(pi));
  return out;
}

double hamiltonian(const UtilityCoefficients& uc, const WealthParams& wp, const LevyMeasure& levy, double t,
                   double x, double y, double z, std::span<const double> k, double ybar, double zbar,
                   std::span<const double> kbar, double pi, double p, double q, std::span<const double> r,
                   double lambda) {
  if (!(x > 0.0)) throw DomainError("Hamiltonian needs x > 0");
  if (!(pi > 0.0)) throw DomainError("Hamiltonian needs pi > 0");
  const std::size_t J = levy.size();
  if (k.size() != J || kbar.size() != J || r.size() != J) throw ConfigError("Hamiltonian: atom count mismatch");
  const std::vector<double> w = levy.weights();
  double h = (wp.b0(t) - pi) * x * p + wp.sigma0(t) * x * q;
  double inner = uc.alpha0(t) * y + uc.alpha1(t) * ybar + uc.beta0(t) * z + uc.beta1(t) * zbar;
  for (std::size_t j = 0; j < J; ++j) {
    h += wp.gamma0(t, j) * x * r[j] * w[j];
    inner += (uc.eta0(t, j) * k[j] + uc.eta1(t, j) * kbar[j]) * w[j];
  }
  return h + lambda * (inner + std::log(pi) + std::log(x));
}

double dH_dpi(double x, double pi, double p, double lambda) {
  if (!(x > 0.0)) throw DomainError("dH/dpi needs x > 0");
  if (!(pi > 0.0)) throw DomainError("dH/dpi needs pi > 0");
  return -p + lambda / pi;
}

LinearCoefficients utility_linear_coefficients(const WealthParams& wp, const UtilityCoefficients& uc,
                                               const WealthGrid& wealth) {
  LinearCoefficients c;
  c.alpha1 = uc.alpha0;
  c.alpha2 = uc.alpha1;
  c.beta1 = uc.beta0;
  c.beta2 = uc.beta1;
  c.eta1 = uc.eta0;
  c.eta2 = uc.eta1;
  c.terminal = utility_terminal(wp, uc, wealth);
  return c;
}

TerminalCondition utility_terminal(const WealthParams& wp, const UtilityCoefficients& uc, const WealthGrid& wealth) {
  WealthLinearTerminal t;
  if (const auto* c = std::get_if<ConstantTerminal>(&uc.theta.kind())) {
    t.factor = *c;
  } else if (const auto* s = std::get_if<SmoothOfBrownianTerminal>(&uc.theta.kind())) {
    t.factor = *s;
  } else {
    throw ConfigError("theta must be a constant or a smooth function of B(T)");
  }
  t.terminal_wealth = wealth.terminal();
  t.sigma0 = wp.sigma0;
  t.gamma0 = wp.gamma0;
  return TerminalCondition(std::move(t));
}

DriverSpec utility_driver(const UtilityCoefficients& uc, const WealthGrid& wealth, const ControlProcess& pi,
                          const TimeGrid& grid, const LevyMeasure& levy) {
  LinearCoefficients c;
  c.alpha1 = uc.alpha0;
  c.alpha2 = uc.alpha1;
  c.beta1 = uc.beta0;
  c.beta2 = uc.beta1;
  c.eta1 = uc.eta0;
  c.eta2 = uc.eta1;
  DriverSpec base = linear_driver(c, grid, levy);
  DriverSpec d;
  d.name = "recursive_utility";
  d.lipschitz = base.lipschitz;
  d.mean_dim = base.mean_dim;
  d.eval = [lin = base.eval, wealth, pi](const DriverInput& in) {
    const double v = pi(in.path, in.node) * wealth(in.path, in.node);
    if (!(v > 0.0)) throw DomainError("ln(pi X) needs pi > 0");
    return lin(in) + std::log(v);
  };
  return d;
}

UtilityValue evaluate_J(const WealthParams& wp, const UtilityCoefficients& uc, const ControlProcess& pi,
                        const PathEnsemble& ens) {
  if (!pi.is_deterministic()) {
    throw CapabilityError("closed-form utility needs a deterministic control; use evaluate_J_dual or Picard");
  }
  const TimeGrid& grid = ens.grid();
  const LevyMeasure& levy = ens.levy();
  uc.validate(grid, levy);
  const std::size_t M = grid.steps();
  const std::size_t J = levy.size();
  const double dt = grid.dt();
  const std::vector<double> w = levy.weights();
  const std::vector<double>& pv = pi.node_values();
  for (double v : pv) {
    if (!(v > 0.0)) throw DomainError("ln(pi X) needs pi > 0 at every node");
  }
  theta_values(uc.theta, ens);

  const WealthGrid wealth = simulate_wealth(wp, pi, ens);
  const LinearCoefficients coeffs = utility_linear_coefficients(wp, uc, wealth);

  // E ln X(t_i) and the Gamma-tilted increments of ln X
  std::vector<double> mean_lx(M + 1), tilt(M + 1, 0.0), cum_a(M + 1, 0.0), sig(M + 1);
  std::vector<double> ljump((M + 1) * J);
  mean_lx[0] = std::log(wp.x0);
  for (std::size_t i = 0; i <= M; ++i) {
    const double t = grid.time(i);
    sig[i] = wp.sigma0(t);
    for (std::size_t j = 0; j < J; ++j) ljump[i * J + j] = std::log1p(wp.gamma0(t, j));
    if (i == M) break;
    const double base = wp.b0(t) - pv[i] - 0.5 * sig[i] * sig[i];
    double plain = base, tilted = base + sig[i] * uc.beta0(t);
    for (std::size_t j = 0; j < J; ++j) {
      const double g = wp.gamma0(t, j);
      plain += (ljump[i * J + j] - g) * w[j];
      tilted += (ljump[i * J + j] * (1.0 + uc.eta0(t, j)) - g) * w[j];
    }
    mean_lx[i + 1] = mean_lx[i] + plain * dt;
    tilt[i + 1] = tilt[i] + tilted * dt;
    cum_a[i + 1] = cum_a[i] + uc.alpha0(t) * dt;
  }
  auto eg = [cum_a](std::size_t i, std::size_t l) { return std::exp(cum_a[l] - cum_a[i]); };
  RunningTerm rt;
  rt.weighted_mean = [=](std::size_t i, std::size_t l) {
    return eg(i, l) * (std::log(pv[l]) + mean_lx[i] + tilt[l] - tilt[i]);
  };
  rt.brownian_sensitivity = [=](std::size_t i, std::size_t l) { return l > i ? eg(i, l) * sig[i] : 0.0; };
  rt.jump_sensitivity = [=](std::size_t i, std::size_t l, std::size_t j) {
    return l > i ? eg(i, l) * ljump[i * J + j] : 0.0;
  };
  rt.pathwise = [pv, wealth](std::size_t n, std::size_t i) { return std::log(pv[i] * wealth(n, i)); };

  const GammaEnsemble gamma = simulate_gamma(coeffs, ens);
  const VolterraSystem sys = assemble_system(coeffs, ens, gamma, MeanSystemForm::kRepresentation, &rt);
  const MeanVector v = neumann_solve(sys);
  const ClosedFormResult cf = y_closed_formula(coeffs, ens, gamma, v, &rt);
  return {cf.y0, cf.se};
}

UtilityValue evaluate_J_dual(const WealthParams& wp, const UtilityCoefficients& uc, const ControlProcess& pi,
                             const PathEnsemble& ens) {
  const TimeGrid& grid = ens.grid();
  const std::size_t M = grid.steps();
  const std::size_t N = ens.n_paths();
  const WealthGrid x = simulate_wealth(wp, pi, ens);
  const LambdaState lam = adjoint_lambda(uc, ens);
  const std::vector<double> th = theta_values(uc.theta, ens);
  double s = 0.0, s2 = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    double v = lam.at(n, M) * th[n] * x(n, M);
    for (std::size_t i = 0; i <= M; ++i) {
      const double c = pi(n, i) * x(n, i);
      if (!(c > 0.0)) throw DomainError("ln(pi X) needs pi > 0");
      v += trapezoid_tail_weight(grid, 0, i) * lam.at(n, i) * std::log(c);
    }
    s += v;
    s2 += v * v;
  }
  const double m = s / static_cast<double>(N);
  const double var = std::max(0.0, (s2 - N * m * m) / static_cast<double>(N - 1));
  return {m, std::sqrt(var / static_cast<double>(N))};
}

}  // namespace mfbsde

namespace mfbsde {

std::vector<ControlProcess> perturbations(const ControlProcess& pi, const TimeGrid& grid, std::size_t count) {
  const std::vector<double>& base = pi.node_values();
  std::vector<ControlProcess> out;
  out.reserve(count);
  const std::size_t uniform = count / 2;
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<double> q = base;
    const double sign = (k % 2) ? 0.2 : -0.2;
    if (k < uniform) {
      const double f = 1.0 + sign * static_cast<double>(1 + k / 2) / 5.0;
      for (double& v : q) v *= f;
    } else {
      const std::size_t m = count - uniform;
      const double c = grid.horizon() * (static_cast<double>(k - uniform) + 0.5) / static_cast<double>(m);
      const double width = 0.1 * grid.horizon();
      for (std::size_t i = 0; i < q.size(); ++i) {
        q[i] *= 1.0 + sign * std::exp(-std::pow((grid.time(i) - c) / width, 2));
      }
    }
    out.push_back(ControlProcess::deterministic(std::move(q)));
  }
  return out;
}

}  // namespace mfbsde
