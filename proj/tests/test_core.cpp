#include <cmath>
#include <memory>

#include "doctest.h"
#include "mfbsde/core.hpp"
#include "mfbsde/errors.hpp"
#include "test_support.hpp"

using namespace mfbsde;

namespace {
PathEnsemble small_ensemble(std::size_t paths = 200) {
  return simulate_ensemble(build_grid(1.0, 20), LevyMeasure({{1.0, 1.0}, {-0.5, 2.0}}), paths, 17);
}
}  // namespace

TEST_CASE("terminal values") {
  const PathEnsemble e = small_ensemble();
  const std::size_t M = e.grid().steps();
  for (std::size_t n = 0; n < e.n_paths(); ++n) {
    CHECK(terminal_value(TerminalCondition::constant(2.0), e, n) == 2.0);
    double b = 0.0;
    for (std::size_t i = 0; i < M; ++i) b += e.db(n, i);
    CHECK(terminal_value(TerminalCondition::brownian_linear(1.0, 0.0), e, n) == doctest::Approx(b).epsilon(1e-13));
    double jl = 0.0;
    for (std::size_t i = 0; i < M; ++i) jl += e.jumps(n, i, 0) - 1.0 * e.grid().dt();
    // psi = 1 on the first atom only
    const auto tc = TerminalCondition::jump_linear([](double, std::size_t j) { return j == 0 ? 1.0 : 0.0; });
    CHECK(terminal_value(tc, e, n) == doctest::Approx(jl).epsilon(1e-12));
  }
}

TEST_CASE("terminal values have finite second moment") {
  const PathEnsemble e = small_ensemble(2000);
  const auto tc = TerminalCondition::smooth_of_jump([](double g) { return g * g; },
                                                    [](double, std::size_t j) { return j == 0 ? 1.0 : -0.5; });
  const auto v = terminal_values(tc, e);
  double s = 0.0;
  for (double x : v) s += x * x;
  CHECK(std::isfinite(s / v.size()));
}

TEST_CASE("Malliavin catalog") {
  const PathEnsemble e = small_ensemble();
  const std::size_t M = e.grid().steps();
  for (std::size_t n = 0; n < 20; ++n) {
    for (double t : {0.0, 0.3, 0.95}) {
      CHECK(malliavin_b(TerminalCondition::constant(3.0), t, e, n) == 0.0);
      CHECK(malliavin_n(TerminalCondition::constant(3.0), t, 1, e, n) == 0.0);
      CHECK(malliavin_b(TerminalCondition::brownian_linear(1.0, 0.0), t, e, n) == 1.0);
      CHECK(malliavin_n(TerminalCondition::brownian_linear(1.0, 0.0), t, 0, e, n) == 0.0);
      const auto sq = TerminalCondition::smooth_of_brownian([](double x) { return x * x; },
                                                            [](double x) { return 2 * x; });
      CHECK(malliavin_b(sq, t, e, n) == 2.0 * e.brownian(n, M));
      CHECK(malliavin_n(sq, t, 0, e, n) == 0.0);

      const std::vector<double> marks = e.levy().marks();
      const auto jl = TerminalCondition::jump_linear([marks](double, std::size_t j) { return marks[j]; });
      CHECK(malliavin_n(jl, t, 0, e, n) == 1.0);
      CHECK(malliavin_n(jl, t, 1, e, n) == -0.5);
      CHECK(malliavin_b(jl, t, e, n) == 0.0);

      const auto g2 = TerminalCondition::smooth_of_jump([](double g) { return g * g; },
                                                        [marks](double, std::size_t j) { return marks[j]; });
      const double G = terminal_value(jl, e, n);
      CHECK(malliavin_n(g2, t, 1, e, n) == doctest::Approx((G - 0.5) * (G - 0.5) - G * G));
    }
  }
}

TEST_CASE("wealth-linear terminal uses the product rule") {
  const PathEnsemble e = small_ensemble(10);
  auto xT = std::make_shared<std::vector<double>>(10);
  for (std::size_t n = 0; n < 10; ++n) (*xT)[n] = 1.0 + 0.1 * n;
  WealthLinearTerminal w{SmoothOfBrownianTerminal{[](double b) { return 1.0 + b * b; }, [](double b) { return 2 * b; }},
                         xT, constant_fn(0.3), constant_mark(0.2)};
  const TerminalCondition tc{w};
  const std::size_t M = e.grid().steps();
  for (std::size_t n = 0; n < 10; ++n) {
    const double b = e.brownian(n, M);
    const double x = (*xT)[n];
    CHECK(terminal_value(tc, e, n) == doctest::Approx((1 + b * b) * x));
    CHECK(malliavin_b(tc, 0.5, e, n) == doctest::Approx(2 * b * x + (1 + b * b) * 0.3 * x));
    CHECK(malliavin_n(tc, 0.5, 1, e, n) == doctest::Approx((1 + b * b) * x * 0.2));
  }
}

TEST_CASE("beta norm") {
  const TimeGrid g = build_grid(1.0, 100);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure({{1.0, 2.0}}), 5, 1);
  SolutionGrid s(g, e.levy(), 5);
  CHECK(beta_norm(s, 3.0) == 0.0);
  for (std::size_t i = 0; i < g.nodes(); ++i) {
    for (std::size_t n = 0; n < 5; ++n) s.y(n, i) = 1.0;
  }
  CHECK(beta_norm(s, 0.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(beta_norm(s, 1.0) - (std::exp(1.0) - 1.0)) < 2.0 * g.dt());
  // K enters with the atom weight
  for (std::size_t i = 0; i < g.nodes(); ++i) {
    for (std::size_t n = 0; n < 5; ++n) s.k(n, i, 0) = 1.0;
  }
  CHECK(beta_norm(s, 0.0) == doctest::Approx(3.0));
  double prev = 0.0;
  for (double b : {0.0, 0.5, 1.0, 5.0, 20.0, 109.0}) {
    const double v = beta_norm(s, b);
    CHECK(v >= prev);
    prev = v;
    CHECK(scaled_beta_norm(s, b) == doctest::Approx(v * std::exp(-b)));
  }
}

TEST_CASE("mean functional evaluation") {
  const PathEnsemble e = small_ensemble(50);
  SolutionGrid s(e.grid(), e.levy(), 50);
  for (std::size_t n = 0; n < 50; ++n) {
    for (std::size_t i = 0; i < s.nodes(); ++i) {
      s.y(n, i) = std::sin(n + i);
      s.z(n, i) = std::cos(n * i);
      s.k(n, i, 0) = 0.01 * n;
      s.k(n, i, 1) = -0.02 * i;
    }
  }
  s.recompute_means();
  for (std::size_t i : {0u, 7u, 20u}) {
    CHECK(mean_functional_eval(identity_mean(), s, i)[0] == s.ybar(i));
    const auto v = mean_functional_eval(triple_mean(e.levy()), s, i);
    CHECK(v[0] == s.ybar(i));
    CHECK(v[1] == s.zbar(i));
    CHECK(v[2] == doctest::Approx(s.kbar(i, 0)));
    CHECK(v[3] == doctest::Approx(s.kbar(i, 1)));
  }
  MeanFunctional sq{"square", 1, [](const MeanInput& in, std::span<double> o) { o[0] = in.y * in.y; }, 10.0};
  SolutionGrid c(e.grid(), e.levy(), 50);
  for (std::size_t n = 0; n < 50; ++n) c.y(n, 3) = 1.5;
  CHECK(mean_functional_eval(sq, c, 3)[0] == 2.25);
}

TEST_CASE("stored means are exact arithmetic means") {
  const PathEnsemble e = small_ensemble(37);
  SolutionGrid s(e.grid(), e.levy(), 37);
  for (std::size_t n = 0; n < 37; ++n) s.y(n, 4) = 0.1 * n * n;
  s.recompute_means();
  double acc = 0.0;
  for (std::size_t n = 0; n < 37; ++n) acc += s.y(n, 4);
  CHECK(s.ybar(4) == acc / 37.0);
}

TEST_CASE("linear driver Lipschitz constant holds on probes") {
  const TimeGrid g = build_grid(1.0, 50);
  const LevyMeasure l({{1.0, 1.0}, {-0.5, 2.0}});
  LinearCoefficients c;
  c.alpha1 = linear_fn(0.2, 0.1);
  c.alpha2 = constant_fn(-0.3);
  c.beta1 = constant_fn(0.4);
  c.beta2 = constant_fn(0.2);
  c.eta1 = per_atom_mark({0.3, -0.2});
  c.eta2 = per_atom_mark({0.1, 0.05});
  c.gamma = constant_fn(1.0);
  const DriverSpec f = linear_driver(c, g, l);
  const ProbeReport r = check_lipschitz(f, g, l);
  CHECK(r.passed);
  CHECK(r.probes == 1000);
  CHECK(r.worst > 0.3 * f.lipschitz);  // bound is not vacuous
  CHECK(check_square_integrable(f, g, l).passed);

  DriverSpec liar = f;
  liar.lipschitz = 0.01;
  CHECK_FALSE(check_lipschitz(liar, g, l).passed);
}

TEST_CASE("linear coefficients reject eta1 <= -1") {
  const TimeGrid g = build_grid(1.0, 10);
  const LevyMeasure l({{1.0, 1.0}});
  LinearCoefficients c;
  c.eta1 = constant_mark(-1.5);
  CHECK_THROWS_AS(c.validate(g, l), DomainError);
}

TEST_CASE("mean functional derivative bounds") {
  const LevyMeasure l({{1.0, 0.5}, {2.0, 2.0}});
  const MeanFunctional t = triple_mean(l);
  const ProbeReport r = check_derivative_bound(t, l);
  CHECK(r.passed);
  CHECK(r.worst == doctest::Approx(t.derivative_bound).epsilon(1e-6));
  CHECK(check_derivative_bound(identity_mean(), l).passed);
  MeanFunctional wild{"cube", 1, [](const MeanInput& in, std::span<double> o) { o[0] = in.y * in.y * in.y; }, 1.0};
  CHECK_FALSE(check_derivative_bound(wild, l).passed);
}

TEST_CASE("default beta") {
  DriverSpec f;
  f.lipschitz = 0.5;
  CHECK(default_beta(f, identity_mean()) == doctest::Approx(13.0));
  f.lipschitz = 2.0;
  CHECK(default_beta(f, identity_mean()) == doctest::Approx(49.0));
}
