#include <cmath>

#include "doctest.h"
#include "mfbsde/errors.hpp"
#include "mfbsde/levy_paths.hpp"
#include "test_support.hpp"

using namespace mfbsde;

TEST_CASE("build_grid subdivides uniformly") {
  const TimeGrid g = build_grid(1.0, 4);
  CHECK(g.nodes() == 5);
  const std::vector<double> expect{0.0, 0.25, 0.5, 0.75, 1.0};
  for (std::size_t i = 0; i < 5; ++i) CHECK(g.time(i) == expect[i]);

  const TimeGrid one = build_grid(2.0, 1);
  CHECK(one.dt() == 2.0);
  CHECK(one.time(0) == 0.0);
  CHECK(one.time(1) == 2.0);

  CHECK_THROWS_AS(build_grid(1.0, 0), ConfigError);
  CHECK_THROWS_AS(build_grid(0.0, 10), ConfigError);
  CHECK_THROWS_AS(build_grid(-1.0, 10), ConfigError);
}

TEST_CASE("grid nodes are i*dt with an exact horizon") {
  const TimeGrid g = build_grid(0.7, 13);
  for (std::size_t i = 0; i + 1 < g.nodes(); ++i) {
    CHECK(g.time(i) == static_cast<double>(i) * g.dt());
    CHECK(g.time(i + 1) > g.time(i));
  }
  CHECK(g.time(13) == 0.7);
}

TEST_CASE("Levy measure validation") {
  CHECK_THROWS_AS(LevyMeasure({{0.0, 1.0}}), ConfigError);
  CHECK_THROWS_AS(LevyMeasure({{1.0, 0.0}}), ConfigError);
  CHECK_THROWS_AS(LevyMeasure({{1.0, 1.0}, {1.0, 2.0}}), ConfigError);
  const LevyMeasure l({{1.0, 2.0}, {-0.5, 0.5}});
  CHECK(l.total_mass() == doctest::Approx(2.5));
}

TEST_CASE("no atoms gives zero jump arrays") {
  const PathEnsemble e = simulate_ensemble(build_grid(1.0, 10), LevyMeasure{}, 50, 1);
  CHECK(e.atoms() == 0);
  CHECK(e.n_paths() == 50);
}

TEST_CASE("Brownian increments have mean 0 and variance dt") {
  const TimeGrid g = build_grid(1.0, 10);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure{}, 100000, 42);
  for (std::size_t i : {0u, 5u, 9u}) {
    const SampleStats s = sample_stats(e.n_paths(), [&](std::size_t n) { return e.db(n, i); });
    CHECK(within_se(s.mean, 0.0, s.se));
    // SE of the sample variance of a Gaussian: sqrt(2/(n-1)) * sigma^2
    const double var_se = std::sqrt(2.0 / (e.n_paths() - 1.0)) * g.dt();
    CHECK(within_se(s.var, g.dt(), var_se));
  }
}

TEST_CASE("Poisson counts have mean w dt") {
  const TimeGrid g = build_grid(1.0, 10);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure({{1.0, 2.0}}), 100000, 7);
  for (std::size_t i : {0u, 3u, 9u}) {
    const SampleStats s = sample_stats(e.n_paths(), [&](std::size_t n) { return double(e.jumps(n, i, 0)); });
    CHECK(within_se(s.mean, 0.2, s.se));
    const SampleStats c = sample_stats(e.n_paths(), [&](std::size_t n) { return e.compensated(n, i, 0); });
    CHECK(within_se(c.mean, 0.0, c.se));
  }
}

TEST_CASE("cumulative paths telescope the increments") {
  const TimeGrid g = build_grid(1.0, 20);
  const PathEnsemble e = simulate_ensemble(g, LevyMeasure({{1.0, 1.5}, {-2.0, 0.7}}), 100, 3);
  for (std::size_t n = 0; n < e.n_paths(); ++n) {
    double b = 0.0;
    std::uint32_t c = 0;
    CHECK(e.brownian(n, 0) == 0.0);
    for (std::size_t i = 0; i < g.steps(); ++i) {
      b += e.db(n, i);
      c += e.jumps(n, i, 1);
      CHECK(e.brownian(n, i + 1) == b);
      CHECK(e.cumulative_jumps(n, i + 1, 1) == c);
    }
  }
}

TEST_CASE("regeneration is bit identical") {
  const TimeGrid g = build_grid(1.0, 16);
  const LevyMeasure l({{1.0, 1.0}, {0.5, 3.0}});
  const PathEnsemble a = simulate_ensemble(g, l, 300, 99);
  const PathEnsemble b = simulate_ensemble(g, l, 300, 99);
  const PathEnsemble c = simulate_ensemble(g, l, 300, 100);
  bool same = true, differs = false;
  for (std::size_t n = 0; n < 300; ++n) {
    for (std::size_t i = 0; i < g.steps(); ++i) {
      same = same && a.db(n, i) == b.db(n, i) && a.jumps(n, i, 1) == b.jumps(n, i, 1);
      differs = differs || a.db(n, i) != c.db(n, i);
    }
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("paths do not depend on ensemble size") {
  // Per-path streams: path n is the same whether 10 or 1000 paths are drawn.
  const TimeGrid g = build_grid(1.0, 8);
  const LevyMeasure l({{1.0, 1.0}});
  const PathEnsemble small = simulate_ensemble(g, l, 10, 5);
  const PathEnsemble big = simulate_ensemble(g, l, 1000, 5);
  for (std::size_t n = 0; n < 10; ++n) {
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(small.db(n, i) == big.db(n, i));
      CHECK(small.jumps(n, i, 0) == big.jumps(n, i, 0));
    }
  }
}

TEST_CASE("Girsanov density") {
  const TimeGrid g = build_grid(1.0, 20);
  const LevyMeasure l({{1.0, 2.0}});
  const PathEnsemble e = simulate_ensemble(g, l, 100000, 11);

  const GirsanovDensity one = girsanov_density(e, zero_fn(), zero_mark());
  for (std::size_t n = 0; n < 1000; ++n) CHECK(one(n, g.steps()) == 1.0);

  const GirsanovDensity m = girsanov_density(e, constant_fn(0.4), constant_mark(0.5));
  for (std::size_t n = 0; n < 100; ++n) {
    CHECK(m(n, 0) == 1.0);
    CHECK(m(n, g.steps()) > 0.0);
  }
  const SampleStats s = sample_stats(e.n_paths(), [&](std::size_t n) { return m(n, g.steps()); });
  CHECK(within_se(s.mean, 1.0, s.se));

  CHECK_THROWS_AS(girsanov_density(e, zero_fn(), constant_mark(-1.0)), DomainError);
  try {
    girsanov_density(e, zero_fn(), [](double t, std::size_t) { return t > 0.5 ? -1.0 : 0.0; });
    FAIL("expected a domain error");
  } catch (const DomainError& err) {
    CHECK(std::string(err.what()).find("zeta = 1") != std::string::npos);
  }
}

TEST_CASE("shift to Q") {
  const TimeGrid g = build_grid(1.0, 10);
  const LevyMeasure l({{1.0, 2.0}});
  const PathEnsemble p = simulate_ensemble(g, l, 100000, 5);

  const PathEnsemble same = shift_to_q(p, zero_fn(), zero_mark());
  bool identical = true;
  for (std::size_t n = 0; n < p.n_paths(); n += 7) {
    for (std::size_t i = 0; i < g.steps(); ++i) {
      identical = identical && same.db(n, i) == p.db(n, i) && same.jumps(n, i, 0) == p.jumps(n, i, 0);
    }
  }
  CHECK(identical);

  const PathEnsemble q = shift_to_q(p, constant_fn(0.3), constant_mark(0.5));
  CHECK(q.tag() == MeasureTag::Q);
  const SampleStats db = sample_stats(q.n_paths(), [&](std::size_t n) { return q.db(n, 4); });
  CHECK(within_se(db.mean, 0.3 * g.dt(), db.se));
  const SampleStats dw = sample_stats(q.n_paths(), [&](std::size_t n) { return q.dw(n, 4); });
  CHECK(within_se(dw.mean, 0.0, dw.se));
  const SampleStats jc = sample_stats(q.n_paths(), [&](std::size_t n) { return double(q.jumps(n, 2, 0)); });
  CHECK(within_se(jc.mean, 3.0 * g.dt(), jc.se));
  const SampleStats comp = sample_stats(q.n_paths(), [&](std::size_t n) { return q.compensated(n, 2, 0); });
  CHECK(within_se(comp.mean, 0.0, comp.se));
}

TEST_CASE("weighted P and shifted Q expectations agree") {
  const TimeGrid g = build_grid(1.0, 20);
  const LevyMeasure l({{1.0, 1.0}, {-0.5, 2.0}});
  const PathEnsemble p = simulate_ensemble(g, l, 100000, 21);
  const TimeFn beta = linear_fn(0.2, 0.3);
  const MarkFn eta = per_atom_mark({0.4, -0.3});
  const GirsanovDensity m = girsanov_density(p, beta, eta);
  const PathEnsemble q = shift_to_q(p, beta, eta);
  const std::size_t M = g.steps();
  // bounded statistics of the path
  auto stat1 = [&](const PathEnsemble& e, std::size_t n) { return std::tanh(e.brownian(n, M)); };
  auto stat2 = [&](const PathEnsemble& e, std::size_t n) {
    return std::min<double>(e.cumulative_jumps(n, M, 0) + 0.5 * e.cumulative_jumps(n, M, 1), 6.0);
  };
  for (auto stat : {std::function<double(const PathEnsemble&, std::size_t)>(stat1),
                    std::function<double(const PathEnsemble&, std::size_t)>(stat2)}) {
    const SampleStats w = sample_stats(p.n_paths(), [&](std::size_t n) { return stat(p, n) * m(n, M); });
    const SampleStats s = sample_stats(q.n_paths(), [&](std::size_t n) { return stat(q, n); });
    CHECK(within_se(w.mean, s.mean, std::hypot(w.se, s.se)));
  }
}
