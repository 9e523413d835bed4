#include "mfbsde/picard.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "mfbsde/errors.hpp"

namespace mfbsde {

namespace {

void check_step_size(const DriverSpec& f, const TimeGrid& grid) {
  if (f.lipschitz * grid.dt() >= 1.0) {
    throw ConfigError("step restriction dt * C < 1 violated for driver '" + f.name + "'; refine the grid");
  }
}

double trapezoid_weight(std::size_t i, const TimeGrid& grid) {
  return (i == 0 || i == grid.steps()) ? 0.5 * grid.dt() : grid.dt();
}

// Fills Y (fitted part only), Z and K at node i from the Y-target.
struct NodeRegressor {
  const ConditionalExpectation& cexp;
  std::vector<double> resid_b;
  std::vector<std::vector<double>> resid_n;

  explicit NodeRegressor(const ConditionalExpectation& c)
      : cexp(c), resid_b(c.ensemble().n_paths()),
        resid_n(c.ensemble().atoms(), std::vector<double>(c.ensemble().n_paths())) {}

  void run(std::size_t i, std::span<const double> target, SolutionGrid& sol) {
    const PathEnsemble& ens = cexp.ensemble();
    const std::size_t N = ens.n_paths();
    const std::size_t J = ens.atoms();
    const double dt = ens.grid().dt();
    auto y = sol.y_node(i);
    cexp.project(i, target, y);
    for (std::size_t n = 0; n < N; ++n) {
      const double u = target[n] - y[n];
      resid_b[n] = u * ens.dw(n, i);
      for (std::size_t j = 0; j < J; ++j) resid_n[j][n] = u * ens.compensated(n, i, j);
    }
    std::vector<std::span<const double>> targets{resid_b};
    std::vector<std::span<double>> outs{sol.z_node(i)};
    for (std::size_t j = 0; j < J; ++j) {
      targets.emplace_back(resid_n[j]);
      outs.push_back(sol.k_node(i, j));
    }
    cexp.project_many(i, targets, outs);
    for (auto& v : sol.z_node(i)) v /= dt;
    for (std::size_t j = 0; j < J; ++j) {
      const double scale = ens.intensity(i, j) * dt;
      for (auto& v : sol.k_node(i, j)) v /= scale;
    }
  }
};

void copy_last_zk(SolutionGrid& sol) {
  const std::size_t M = sol.nodes() - 1;
  std::copy(sol.z_node(M - 1).begin(), sol.z_node(M - 1).end(), sol.z_node(M).begin());
  for (std::size_t j = 0; j < sol.atoms(); ++j) {
    std::copy(sol.k_node(M - 1, j).begin(), sol.k_node(M - 1, j).end(), sol.k_node(M, j).begin());
  }
}

SolutionGrid initial_iterate(const PathEnsemble& ens, std::span<const double> xi) {
  SolutionGrid sol(ens.grid(), ens.levy(), ens.n_paths());
  double m = 0.0;
  for (double x : xi) m += x;
  m /= static_cast<double>(xi.size());
  const std::size_t M = ens.grid().steps();
  for (std::size_t i = 0; i < M; ++i) std::fill(sol.y_node(i).begin(), sol.y_node(i).end(), m);
  std::copy(xi.begin(), xi.end(), sol.y_node(M).begin());
  sol.recompute_means();
  return sol;
}

void record_delta(PicardReport& rep, const SolutionGrid& prev, const SolutionGrid& next) {
  const TimeGrid& g = next.grid();
  double sup = 0.0, integ = 0.0;
  for (std::size_t i = 0; i < next.nodes(); ++i) {
    double s = 0.0;
    const auto a = prev.y_node(i);
    const auto b = next.y_node(i);
    for (std::size_t n = 0; n < a.size(); ++n) s += (b[n] - a[n]) * (b[n] - a[n]);
    s /= static_cast<double>(a.size());
    sup = std::max(sup, s);
    if (i < g.steps()) integ += s * g.dt();
  }
  rep.ratio.push_back(rep.delta.empty() || rep.delta.back() == 0.0 ? 0.0 : sup / rep.delta.back());
  rep.delta.push_back(sup);
  rep.integrated_delta.push_back(integ);
}

void frozen_driver(const DriverSpec& f, const MeanFunctional& phi, const SolutionGrid& in, std::vector<double>& fhat) {
  const TimeGrid& g = in.grid();
  const std::size_t N = in.n_paths();
  const std::size_t J = in.atoms();
  fhat.resize(g.nodes() * N);
  for (std::size_t i = 0; i < g.nodes(); ++i) {
    const std::vector<double> mu = mean_functional_eval(phi, in, i);
    const double t = g.time(i);
#pragma omp parallel
    {
      std::vector<double> k(J);
#pragma omp for schedule(static)
      for (long long nn = 0; nn < static_cast<long long>(N); ++nn) {
        const auto n = static_cast<std::size_t>(nn);
        in.gather_k(n, i, k);
        fhat[i * N + n] = f.eval(DriverInput{n, i, t, in.y(n, i), in.z(n, i), k, mu});
      }
    }
  }
}

}  // namespace

SolutionGrid solve_inner(std::span<const double> fhat, std::span<const double> xi,
                         const ConditionalExpectation& cexp) {
  const PathEnsemble& ens = cexp.ensemble();
  const TimeGrid& g = ens.grid();
  const std::size_t N = ens.n_paths();
  const std::size_t M = g.steps();
  if (fhat.size() != (M + 1) * N || xi.size() != N) throw ConfigError("solve_inner: field sizes do not match");
  for (double v : fhat) {
    if (!std::isfinite(v)) throw NumericalError("solve_inner: frozen driver is not finite");
  }
  const double h = 0.5 * g.dt();
  SolutionGrid sol(g, ens.levy(), N);
  std::copy(xi.begin(), xi.end(), sol.y_node(M).begin());
  NodeRegressor reg(cexp);
  std::vector<double> target(N);
  for (std::size_t i = M; i-- > 0;) {
    const auto next = sol.y_node(i + 1);
    for (std::size_t n = 0; n < N; ++n) target[n] = next[n] + h * fhat[(i + 1) * N + n];
    reg.run(i, target, sol);
    auto y = sol.y_node(i);
    for (std::size_t n = 0; n < N; ++n) y[n] += h * fhat[i * N + n];
  }
  copy_last_zk(sol);
  sol.recompute_means();
  return sol;
}

SolutionGrid solve_inner(std::span<const double> fhat, const TerminalCondition& tc,
                         const ConditionalExpectation& cexp) {
  const std::vector<double> xi = terminal_values(tc, cexp.ensemble());
  return solve_inner(fhat, xi, cexp);
}

Estimate sweep_estimate(std::span<const double> fhat, std::span<const double> xi, const TimeGrid& grid) {
  const std::size_t N = xi.size();
  double s = 0.0, s2 = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    double a = xi[n];
    for (std::size_t i = 0; i < grid.nodes(); ++i) a += trapezoid_weight(i, grid) * fhat[i * N + n];
    s += a;
    s2 += a * a;
  }
  const double m = s / static_cast<double>(N);
  const double var = N > 1 ? std::max(0.0, (s2 - N * m * m) / static_cast<double>(N - 1)) : 0.0;
  return {m, std::sqrt(var / static_cast<double>(N))};
}

SolutionGrid apply_full_freeze_map(const DriverSpec& f, const MeanFunctional& phi, const SolutionGrid& input,
                                   std::span<const double> xi, const ConditionalExpectation& cexp) {
  std::vector<double> fhat;
  frozen_driver(f, phi, input, fhat);
  return solve_inner(fhat, xi, cexp);
}

PicardResult picard_full_freeze(const DriverSpec& f, const MeanFunctional& phi, const TerminalCondition& tc,
                                const ConditionalExpectation& cexp, const PicardSettings& settings) {
  const PathEnsemble& ens = cexp.ensemble();
  check_step_size(f, ens.grid());
  if (f.mean_dim != phi.dim) throw ConfigError("driver mean dimension does not match the mean functional");
  const std::vector<double> xi = terminal_values(tc, ens);
  PicardResult res{initial_iterate(ens, xi), {}};
  res.report.scheme = "full_freeze";
  res.report.ridge_factor = cexp.basis().ridge_factor;
  std::vector<double> fhat;
  for (int it = 1; it <= settings.max_iter; ++it) {
    frozen_driver(f, phi, res.solution, fhat);
    SolutionGrid next = solve_inner(fhat, xi, cexp);
    record_delta(res.report, res.solution, next);
    const Estimate e = sweep_estimate(fhat, xi, ens.grid());
    res.report.y0 = e.value;
    res.report.y0_se = e.se;
    res.solution = std::move(next);
    res.report.iterations = it;
    if (res.report.delta.back() < settings.tol) {
      res.report.converged = true;
      break;
    }
  }
  return res;
}

MeanFreezeIteration::MeanFreezeIteration(const DriverSpec& g, const TerminalCondition& tc,
                                         const ConditionalExpectation& cexp, PicardSettings settings)
    : g_(&g), cexp_(&cexp), settings_(settings) {
  check_step_size(g, cexp.ensemble().grid());
  if (g.mean_dim != 1) throw ConfigError("mean-freeze drivers take the mean of Y only");
  xi_ = terminal_values(tc, cexp.ensemble());
  current_ = initial_iterate(cexp.ensemble(), xi_);
  report_.scheme = "mean_freeze";
  report_.ridge_factor = cexp.basis().ridge_factor;
}

bool MeanFreezeIteration::step() {
  if (done_) return true;
  const PathEnsemble& ens = cexp_->ensemble();
  const TimeGrid& grid = ens.grid();
  const std::size_t N = ens.n_paths();
  const std::size_t M = grid.steps();
  const std::size_t J = ens.atoms();
  const double h = 0.5 * grid.dt();
  const DriverSpec& g = *g_;

  SolutionGrid next(grid, ens.levy(), N);
  std::copy(xi_.begin(), xi_.end(), next.y_node(M).begin());
  NodeRegressor reg(*cexp_);
  std::vector<double> gcur(N), target(N), acc(xi_);

  // Z and K at the terminal node: covariation of xi over the last step.
  reg.run(M - 1, next.y_node(M), next);
  copy_last_zk(next);
  {
    const double mu[1] = {current_.ybar(M)};
    std::vector<double> k(J);
    for (std::size_t n = 0; n < N; ++n) {
      next.gather_k(n, M, k);
      gcur[n] = g.eval(DriverInput{n, M, grid.horizon(), next.y(n, M), next.z(n, M), k, mu});
      acc[n] += h * gcur[n];
    }
  }
  for (std::size_t i = M; i-- > 0;) {
    const auto ynext = next.y_node(i + 1);
    for (std::size_t n = 0; n < N; ++n) target[n] = ynext[n] + h * gcur[n];
    reg.run(i, target, next);
    const double t = grid.time(i);
    const double mu[1] = {current_.ybar(i)};
    const double w = i == 0 ? h : 2.0 * h;
#pragma omp parallel
    {
      std::vector<double> k(J);
#pragma omp for schedule(static)
      for (long long nn = 0; nn < static_cast<long long>(N); ++nn) {
        const auto n = static_cast<std::size_t>(nn);
        next.gather_k(n, i, k);
        const double c = next.y(n, i);
        const double z = next.z(n, i);
        const double yp = c + h * g.eval(DriverInput{n, i, t, c, z, k, mu});
        const double y = c + h * g.eval(DriverInput{n, i, t, yp, z, k, mu});
        next.y(n, i) = y;
        gcur[n] = g.eval(DriverInput{n, i, t, y, z, k, mu});
        acc[n] += w * gcur[n];
      }
    }
  }
  copy_last_zk(next);
  next.recompute_means();

  record_delta(report_, current_, next);
  double s = 0.0, s2 = 0.0;
  for (double a : acc) {
    s += a;
    s2 += a * a;
  }
  report_.y0 = s / static_cast<double>(N);
  report_.y0_se = std::sqrt(std::max(0.0, (s2 - N * report_.y0 * report_.y0) / static_cast<double>(N - 1)) /
                            static_cast<double>(N));
  current_ = std::move(next);
  report_.iterations += 1;
  if (report_.delta.back() < settings_.tol) {
    report_.converged = true;
    done_ = true;
  } else if (report_.iterations >= settings_.max_iter) {
    done_ = true;
  }
  return done_;
}

PicardResult MeanFreezeIteration::take() && { return {std::move(current_), std::move(report_)}; }

PicardResult picard_mean_freeze(const DriverSpec& g, const TerminalCondition& tc, const ConditionalExpectation& cexp,
                                const PicardSettings& settings) {
  MeanFreezeIteration it(g, tc, cexp, settings);
  while (!it.step()) {
  }
  return std::move(it).take();
}

ContractionReport contraction_check(const DriverSpec& f, const MeanFunctional& phi, const TerminalCondition& tc,
                                    const ConditionalExpectation& cexp, double beta, std::size_t pairs,
                                    std::uint64_t seed) {
  const PathEnsemble& ens = cexp.ensemble();
  const TimeGrid& grid = ens.grid();
  const std::size_t N = ens.n_paths();
  const std::size_t J = ens.atoms();
  const std::vector<double> xi = terminal_values(tc, ens);
  ContractionReport rep;
  rep.beta = beta;
  CounterStream rng(seed, 0, 0);
  std::uniform_real_distribution<double> u(-2.0, 2.0);

  // Random adapted triplet: affine in (t, B(t), S_j(t)) with random coefficients.
  auto draw = [&]() {
    SolutionGrid s(grid, ens.levy(), N);
    const double a0 = u(rng), a1 = u(rng), a2 = u(rng), b0 = u(rng), b1 = u(rng);
    std::vector<double> c0(J), c1(J);
    for (std::size_t j = 0; j < J; ++j) {
      c0[j] = u(rng);
      c1[j] = u(rng);
    }
    for (std::size_t i = 0; i < grid.nodes(); ++i) {
      const double t = grid.time(i);
      for (std::size_t n = 0; n < N; ++n) {
        const double b = ens.brownian(n, i);
        s.y(n, i) = a0 + a1 * b + a2 * t;
        s.z(n, i) = b0 + b1 * b;
        for (std::size_t j = 0; j < J; ++j) s.k(n, i, j) = c0[j] + c1[j] * ens.compensated_sum_p(n, i, j);
      }
    }
    s.recompute_means();
    return s;
  };
  auto difference = [&](const SolutionGrid& a, const SolutionGrid& b) {
    SolutionGrid d(grid, ens.levy(), N);
    for (std::size_t i = 0; i < grid.nodes(); ++i) {
      for (std::size_t n = 0; n < N; ++n) {
        d.y(n, i) = a.y(n, i) - b.y(n, i);
        d.z(n, i) = a.z(n, i) - b.z(n, i);
        for (std::size_t j = 0; j < J; ++j) d.k(n, i, j) = a.k(n, i, j) - b.k(n, i, j);
      }
    }
    return d;
  };

  for (std::size_t p = 0; p < pairs; ++p) {
    const SolutionGrid in1 = draw();
    const SolutionGrid in2 = draw();
    const double din = scaled_beta_norm(difference(in1, in2), beta);
    double ratio = 0.0;
    if (din > 0.0) {
      const SolutionGrid out1 = apply_full_freeze_map(f, phi, in1, xi, cexp);
      const SolutionGrid out2 = apply_full_freeze_map(f, phi, in2, xi, cexp);
      ratio = scaled_beta_norm(difference(out1, out2), beta) / din;
    }
    rep.ratios.push_back(ratio);
    rep.max_ratio = std::max(rep.max_ratio, ratio);
  }
  return rep;
}

}  // namespace mfbsde
