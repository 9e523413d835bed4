#include <cmath>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "doctest.h"
#include "mfbsde/errors.hpp"
#include "mfbsde/picard.hpp"
#include "test_support.hpp"

using namespace mfbsde;

namespace {

DriverSpec driver(std::string name, double lip, std::function<double(const DriverInput&)> f, std::size_t dim = 1) {
  DriverSpec d;
  d.name = std::move(name);
  d.lipschitz = lip;
  d.eval = std::move(f);
  d.mean_dim = dim;
  return d;
}

std::vector<double> constant_field(const TimeGrid& g, std::size_t N, double v) {
  return std::vector<double>(g.nodes() * N, v);
}

}  // namespace

TEST_CASE("condexp reproduces constants exactly") {
  const PathEnsemble e = simulate_ensemble(build_grid(1.0, 10), LevyMeasure({{1.0, 1.0}}), 1000, 3);
  const ConditionalExpectation ce(e, {});
  std::vector<double> t(1000, 3.25), out(1000);
  for (std::size_t i = 0; i <= 10; ++i) {
    ce.project(i, t, out);
    for (double v : out) CHECK(v == 3.25);
  }
}

TEST_CASE("condexp martingale projection of B(T)") {
  const TimeGrid g = build_grid(1.0, 10);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure{}, 20000, 5);
  const ConditionalExpectation ce(e, {1, false});
  std::vector<double> target(e.n_paths());
  for (std::size_t n = 0; n < e.n_paths(); ++n) target[n] = e.brownian(n, g.steps());
  for (std::size_t i : {2u, 5u, 8u}) {
    const RegressionFit fit = ce.fit(i, target);
    REQUIRE(fit.names.size() == 2);
    CHECK(fit.names[1] == "B");
    CHECK(within_se(fit.coefficients[1], 1.0, fit.standard_errors[1]));
    CHECK(within_se(fit.coefficients[0], 0.0, fit.standard_errors[0]));
    std::vector<double> out(e.n_paths());
    ce.project(i, target, out);
    double err = 0.0;
    for (std::size_t n = 0; n < e.n_paths(); ++n) err = std::max(err, std::abs(out[n] - e.brownian(n, i)));
    CHECK(err < 0.05);
  }
}

TEST_CASE("condexp on pure noise returns the sample mean") {
  const TimeGrid g = build_grid(1.0, 10);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure({{1.0, 1.0}}), 20000, 8);
  const ConditionalExpectation ce(e, {2, false});
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(2.0, 1.0);
  std::vector<double> target(e.n_paths()), out(e.n_paths());
  for (double& v : target) v = nd(rng);
  const SampleStats s = sample_stats(e.n_paths(), [&](std::size_t n) { return target[n]; });
  ce.project(6, target, out);
  const SampleStats f = sample_stats(e.n_paths(), [&](std::size_t n) { return out[n]; });
  CHECK(f.mean == doctest::Approx(s.mean).epsilon(1e-12));
  CHECK(within_se(f.mean, 2.0, s.se));
  // Fitted values scatter around the mean only through p noise slopes: rms spread ~ sigma sqrt(p / N).
  const double p = static_cast<double>(ce.active_features(6));
  CHECK(std::sqrt(f.var) <= 3.0 * std::sqrt(s.var * p / e.n_paths()));
  CHECK(ce.ridge(6) > 0.0);
}

TEST_CASE("condexp at time zero uses the intercept only") {
  const PathEnsemble e = simulate_ensemble(build_grid(1.0, 4), LevyMeasure({{1.0, 1.0}}), 500, 3);
  const ConditionalExpectation ce(e, {2, false});
  CHECK(ce.active_features(0) == 0);
  CHECK(ce.active_features(2) == ce.feature_count());
}

TEST_CASE("solve_inner with zero driver and constant terminal is exact") {
  const TimeGrid g = build_grid(1.0, 20);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure({{1.0, 1.0}}), 2000, 4);
  const ConditionalExpectation ce(e, {});
  const SolutionGrid s = solve_inner(constant_field(g, 2000, 0.0), TerminalCondition::constant(1.7), ce);
  for (std::size_t i = 0; i <= 20; ++i) {
    for (std::size_t n = 0; n < 2000; n += 50) {
      CHECK(s.y(n, i) == 1.7);
      CHECK(s.z(n, i) == 0.0);
      CHECK(s.k(n, i, 0) == 0.0);
    }
  }
}

TEST_CASE("solve_inner with unit driver follows 1 - t") {
  const TimeGrid g = build_grid(1.0, 100);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure{}, 1000, 4);
  const ConditionalExpectation ce(e, {});
  const SolutionGrid s = solve_inner(constant_field(g, 1000, 1.0), TerminalCondition::constant(0.0), ce);
  double err = 0.0;
  for (std::size_t i = 0; i <= 100; ++i) err = std::max(err, std::abs(s.ybar(i) - (1.0 - g.time(i))));
  CHECK(err < 1e-12);
}

TEST_CASE("solve_inner recovers Z = 1 for xi = B(T)") {
  const TimeGrid g = build_grid(1.0, 50);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure({{1.0, 1.0}}), 50000, 9);
  const ConditionalExpectation ce(e, {});
  const SolutionGrid s = solve_inner(constant_field(g, 50000, 0.0), TerminalCondition::brownian_linear(1.0, 0.0), ce);
  // Four nodes, two checks each: Bonferroni-adjusted threshold 3.5 SE.
  for (std::size_t i : {0u, 10u, 25u, 49u}) {
    const SampleStats raw = sample_stats(e.n_paths(), [&](std::size_t n) {
      return (s.y(n, i + 1) - s.y(n, i)) * e.dw(n, i) / g.dt();
    });
    CHECK(within_se(s.zbar(i), 1.0, raw.se, 3.5));
    const SampleStats k = sample_stats(e.n_paths(), [&](std::size_t n) {
      return (s.y(n, i + 1) - s.y(n, i)) * e.compensated(n, i, 0) / g.dt();
    });
    CHECK(within_se(s.kbar(i, 0), 0.0, k.se, 3.5));
  }
  // Node-averaged Z: slope errors propagate down the backward chain, so node
  // estimates are correlated and the SE comes from independent replications.
  auto node_average = [&](const SolutionGrid& sol) {
    double a = 0.0;
    for (std::size_t i = 0; i < g.steps(); ++i) a += sol.zbar(i);
    return a / static_cast<double>(g.steps());
  };
  const std::size_t reps = 20;
  const double se = replicated_se(reps, [&](std::size_t b) {
    const PathEnsemble eb = simulate_ensemble(g, e.levy(), e.n_paths() / reps, 1000 + b);
    const ConditionalExpectation cb(eb, {});
    const std::vector<double> zero((g.steps() + 1) * eb.n_paths(), 0.0);
    return node_average(solve_inner(zero, TerminalCondition::brownian_linear(1.0, 0.0), cb));
  });
  CHECK(within_se(node_average(s), 1.0, se));
}

TEST_CASE("full freeze: zero driver converges to the solve_inner output") {
  const TimeGrid g = build_grid(1.0, 20);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure({{1.0, 1.0}}), 5000, 2);
  const ConditionalExpectation ce(e, {});
  const auto tc = TerminalCondition::brownian_linear(1.0, 0.5);
  const DriverSpec zero = driver("zero", 0.0, [](const DriverInput&) { return 0.0; });
  const PicardResult r = picard_full_freeze(zero, identity_mean(), tc, ce);
  const SolutionGrid direct = solve_inner(constant_field(g, 5000, 0.0), tc, ce);
  CHECK(r.report.converged);
  REQUIRE(r.report.delta.size() == 2);
  CHECK(r.report.delta[1] == 0.0);
  bool same = true;
  for (std::size_t i = 0; i <= 20; ++i) {
    for (std::size_t n = 0; n < 5000; ++n) same = same && r.solution.y(n, i) == direct.y(n, i);
  }
  CHECK(same);
}

TEST_CASE("full freeze ODE oracles") {
  const TimeGrid g = build_grid(1.0, 100);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure({{1.0, 1.0}}), 2000, 2);
  const ConditionalExpectation ce(e, {});
  const DriverSpec mean_drv = driver("mean", 1.0, [](const DriverInput& in) { return in.mean[0]; });
  const PicardResult a = picard_full_freeze(mean_drv, identity_mean(), TerminalCondition::constant(1.0), ce);
  CHECK(a.report.converged);
  CHECK(std::abs(a.solution.ybar(0) - std::exp(1.0)) < 1e-3);
  CHECK(std::abs(a.report.y0 - std::exp(1.0)) < 1e-3);

  const DriverSpec neg = driver("neg_y", 1.0, [](const DriverInput& in) { return -in.y; });
  const PicardResult b = picard_full_freeze(neg, identity_mean(), TerminalCondition::constant(1.0), ce);
  CHECK(b.report.converged);
  CHECK(std::abs(b.solution.ybar(0) - std::exp(-1.0)) < 1e-3);
  for (std::size_t i = 0; i <= 100; ++i) {
    CHECK(std::abs(b.solution.y(17, i) - std::exp(-(1.0 - g.time(i)))) < 1e-3);
  }
}

TEST_CASE("terminal exactness holds every iterate") {
  const TimeGrid g = build_grid(1.0, 20);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure({{1.0, 1.0}}), 3000, 6);
  const ConditionalExpectation ce(e, {});
  const auto tc = TerminalCondition::smooth_of_brownian([](double x) { return std::sin(x); },
                                                        [](double x) { return std::cos(x); });
  const auto xi = terminal_values(tc, e);
  const DriverSpec f = driver("mix", 1.0, [](const DriverInput& in) { return 0.5 * std::cos(in.y) + 0.3 * in.z + 0.2 * in.mean[0]; });
  for (int it = 1; it <= 3; ++it) {
    const PicardResult r = picard_full_freeze(f, identity_mean(), tc, ce, {0.0, it});
    bool exact = true;
    for (std::size_t n = 0; n < e.n_paths(); ++n) exact = exact && r.solution.y(n, 20) == xi[n];
    CHECK(exact);
    CHECK(r.report.iterations == it);
    CHECK_FALSE(r.report.converged);
  }
}

TEST_CASE("dynamic consistency of the converged solution") {
  const TimeGrid g = build_grid(1.0, 25);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure({{1.0, 1.0}}), 20000, 12);
  const ConditionalExpectation ce(e, {});
  const auto tc = TerminalCondition::brownian_linear(1.0, 0.0);
  const DriverSpec f = driver("lin", 0.5, [](const DriverInput& in) { return 0.5 * in.y + 0.2 * in.mean[0] + 0.1; });
  const PicardResult r = picard_full_freeze(f, identity_mean(), tc, ce);
  REQUIRE(r.report.converged);
  // Y(t_{i+1}) - Y(t_i) + trapezoid increment of f is a martingale increment:
  // its regression on node-i features has intercept and slopes statistically zero.
  const double h = 0.5 * g.dt();
  for (std::size_t i : {3u, 12u, 20u}) {
    std::vector<double> inc(e.n_paths());
    for (std::size_t n = 0; n < e.n_paths(); ++n) {
      const double fi = 0.5 * r.solution.y(n, i) + 0.2 * r.solution.ybar(i) + 0.1;
      const double fn = 0.5 * r.solution.y(n, i + 1) + 0.2 * r.solution.ybar(i + 1) + 0.1;
      inc[n] = r.solution.y(n, i + 1) - r.solution.y(n, i) + h * (fi + fn);
    }
    const RegressionFit fit = ce.fit(i, inc);
    for (std::size_t c = 0; c < fit.coefficients.size(); ++c) {
      CHECK(within_se(fit.coefficients[c], 0.0, fit.standard_errors[c], 3.0, 1e-10));
    }
  }
}

TEST_CASE("mean freeze ODE oracle and terminal exactness") {
  const TimeGrid g = build_grid(1.0, 100);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure({{1.0, 1.0}}), 2000, 2);
  const ConditionalExpectation ce(e, {});
  const DriverSpec mean_drv = driver("mean", 1.0, [](const DriverInput& in) { return in.mean[0]; });
  const PicardResult a = picard_mean_freeze(mean_drv, TerminalCondition::constant(1.0), ce);
  CHECK(a.report.converged);
  CHECK(std::abs(a.solution.ybar(0) - std::exp(1.0)) < 1e-3);
  CHECK(std::abs(a.report.y0 - std::exp(1.0)) < 1e-3);
}

TEST_CASE("mean freeze equals full freeze for solution-independent drivers") {
  const TimeGrid g = build_grid(1.0, 30);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure({{1.0, 1.0}}), 4000, 13);
  const ConditionalExpectation ce(e, {});
  const auto tc = TerminalCondition::brownian_linear(0.7, 0.1);
  const PathEnsemble* ep = &e;
  const DriverSpec f = driver("exog", 0.0, [ep](const DriverInput& in) {
    return std::sin(ep->brownian(in.path, in.node)) + in.t;
  });
  const PicardResult full = picard_full_freeze(f, identity_mean(), tc, ce);
  MeanFreezeIteration it(f, tc, ce);
  it.step();
  bool same = true;
  for (std::size_t i = 0; i <= 30; ++i) {
    for (std::size_t n = 0; n < 4000; ++n) {
      same = same && full.solution.y(n, i) == it.current().y(n, i) && full.solution.z(n, i) == it.current().z(n, i);
    }
  }
  CHECK(same);
  it.step();
  CHECK(it.report().delta.back() == 0.0);
}

TEST_CASE("mean freeze and full freeze agree on coupled drivers") {
  const TimeGrid g = build_grid(1.0, 50);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure({{1.0, 1.0}}), 20000, 31);
  const ConditionalExpectation ce(e, {});
  const auto tc = TerminalCondition::brownian_linear(1.0, 1.0);
  const DriverSpec f = driver("coupled", 1.0, [](const DriverInput& in) {
    return 0.4 * in.y + 0.3 * in.z + 0.2 * in.k[0] + 0.5 * in.mean[0] + 0.1 * std::cos(in.y);
  });
  const PicardResult full = picard_full_freeze(f, identity_mean(), tc, ce);
  const PicardResult mf = picard_mean_freeze(f, tc, ce);
  CHECK(full.report.converged);
  CHECK(mf.report.converged);
  CHECK(within_se(full.report.y0, mf.report.y0, std::hypot(full.report.y0_se, mf.report.y0_se)));
}

TEST_CASE("mean freeze deltas follow the factorial envelope") {
  const TimeGrid g = build_grid(1.0, 50);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure({{1.0, 1.0}}), 5000, 3);
  const ConditionalExpectation ce(e, {});
  const double C = 1.0;
  const DriverSpec f = driver("coupled", C, [](const DriverInput& in) { return 0.3 * in.y + 1.0 * in.mean[0]; });
  const PicardResult r = picard_mean_freeze(f, TerminalCondition::brownian_linear(1.0, 1.0), ce, {1e-14, 50});
  const auto& d = r.report.delta;
  REQUIRE(d.size() >= 6);
  const double T = 1.0;
  auto envelope = [&](int n) { return std::pow(T, n) * std::exp(C * n * T) / std::tgamma(n + 1.0); };
  const double c = d[0] / envelope(1);
  for (int n = 2; n <= 6; ++n) CHECK(d[n - 1] <= c * envelope(n));
  for (int n = 2; n <= 5; ++n) CHECK(d[n] / d[n - 1] < d[n - 1] / d[n - 2]);
}

TEST_CASE("contraction check") {
  const TimeGrid g = build_grid(1.0, 50);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure({{1.0, 1.0}}), 4000, 21);
  const ConditionalExpectation ce(e, {});
  const auto tc = TerminalCondition::brownian_linear(1.0, 0.0);
  const DriverSpec zero = driver("zero", 0.0, [](const DriverInput&) { return 0.0; });
  const ContractionReport z = contraction_check(zero, identity_mean(), tc, ce, 13.0);
  CHECK(z.ratios.size() == 10);
  CHECK(z.max_ratio == 0.0);

  const DriverSpec f = driver("lip", 0.5, [](const DriverInput& in) {
    return 0.2 * in.y + 0.2 * std::sin(in.z) + 0.1 * in.k[0] + 0.2 * in.mean[0];
  });
  const ContractionReport r = contraction_check(f, identity_mean(), tc, ce, default_beta(f, identity_mean()));
  CHECK(r.max_ratio <= 0.55);
  CHECK(r.max_ratio > 0.0);
}

TEST_CASE("step size restriction is enforced") {
  const TimeGrid g = build_grid(1.0, 4);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure{}, 100, 1);
  const ConditionalExpectation ce(e, {1, false});
  const DriverSpec f = driver("steep", 5.0, [](const DriverInput& in) { return 5.0 * in.y; });
  CHECK_THROWS_AS(picard_full_freeze(f, identity_mean(), TerminalCondition::constant(1.0), ce), ConfigError);
}

#ifdef _OPENMP
TEST_CASE("results do not depend on the thread count") {
  const TimeGrid g = build_grid(1.0, 20);
  const LevyMeasure l({{1.0, 1.0}});
  const DriverSpec f = driver("mix", 1.0, [](const DriverInput& in) { return 0.5 * std::cos(in.y) + 0.3 * in.z + 0.2 * in.mean[0]; });
  const auto tc = TerminalCondition::brownian_linear(1.0, 0.0);
  omp_set_num_threads(1);
  const PathEnsemble e1 = simulate_ensemble(g, l, 3000, 8);
  const ConditionalExpectation c1(e1, {});
  const PicardResult r1 = picard_full_freeze(f, identity_mean(), tc, c1);
  omp_set_num_threads(4);
  const PathEnsemble e4 = simulate_ensemble(g, l, 3000, 8);
  const ConditionalExpectation c4(e4, {});
  const PicardResult r4 = picard_full_freeze(f, identity_mean(), tc, c4);
  bool same = true;
  for (std::size_t i = 0; i <= 20; ++i) {
    for (std::size_t n = 0; n < 3000; ++n) same = same && r1.solution.y(n, i) == r4.solution.y(n, i);
  }
  CHECK(same);
}
#endif
