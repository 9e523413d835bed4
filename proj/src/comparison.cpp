#include "mfbsde/comparison.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "mfbsde/errors.hpp"

namespace mfbsde {

namespace {

void record(HypothesisCheck& c, double slack, double scale, const std::string& probe) {
  ++c.probes;
  if (c.probes == 1 || slack < c.worst) c.worst = slack;
  if (slack < -1e-12 * std::max(1.0, scale)) {
    if (c.violations == 0) c.counterexample = probe;
    ++c.violations;
    c.passed = false;
  }
}

HypothesisCheck from_probe(const std::string& name, const ProbeReport& r) {
  HypothesisCheck c;
  c.name = name;
  c.passed = r.passed;
  c.probes = r.probes;
  c.worst = r.bound - r.worst;
  c.violations = r.passed ? 0 : 1;
  if (!r.passed) c.counterexample = r.detail;
  return c;
}

std::string describe(double t, double y, double z, const std::vector<double>& k, const std::string& extra) {
  std::ostringstream os;
  os << "t=" << t << " y=" << y << " z=" << z << " k=(";
  for (std::size_t j = 0; j < k.size(); ++j) os << (j ? "," : "") << k[j];
  os << ") " << extra;
  return os.str();
}

// Minimum of (Y1 - Y2) per node over all paths and over each path batch.
struct MarginStats {
  std::vector<double> min, max, mean, se;
  double global_min = std::numeric_limits<double>::infinity();
  double global_se = 0.0;
  std::size_t argmin = 0;
};

double batch_se(const std::vector<double>& v) {
  const double B = static_cast<double>(v.size());
  double m = 0.0;
  for (double x : v) m += x;
  m /= B;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (B - 1.0) / B);
}

MarginStats margins(const SolutionGrid& a, const SolutionGrid& b, std::size_t batches) {
  const std::size_t N = a.n_paths();
  const std::size_t nodes = a.nodes();
  batches = std::max<std::size_t>(2, std::min(batches, N));
  MarginStats s;
  s.min.assign(nodes, std::numeric_limits<double>::infinity());
  s.max.assign(nodes, -std::numeric_limits<double>::infinity());
  s.mean.assign(nodes, 0.0);
  s.se.assign(nodes, 0.0);
  std::vector<double> global_batch(batches, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < nodes; ++i) {
    std::vector<double> bm(batches, std::numeric_limits<double>::infinity());
    for (std::size_t n = 0; n < N; ++n) {
      const double d = a.y(n, i) - b.y(n, i);
      s.min[i] = std::min(s.min[i], d);
      s.max[i] = std::max(s.max[i], d);
      s.mean[i] += d;
      const std::size_t bi = n * batches / N;
      bm[bi] = std::min(bm[bi], d);
    }
    s.mean[i] /= static_cast<double>(N);
    s.se[i] = batch_se(bm);
    for (std::size_t k = 0; k < batches; ++k) global_batch[k] = std::min(global_batch[k], bm[k]);
    if (s.min[i] < s.global_min) {
      s.global_min = s.min[i];
      s.argmin = i;
    }
  }
  s.global_se = batch_se(global_batch);
  return s;
}

}  // namespace

bool HypothesisReport::all_passed() const {
  for (const HypothesisCheck* c : checks()) {
    if (!c->passed) return false;
  }
  return true;
}

std::vector<const HypothesisCheck*> HypothesisReport::checks() const {
  return {&terminal, &driver, &jump, &lipschitz1, &lipschitz2};
}

HypothesisReport verify_hypotheses(const ComparisonScenario& sc, const PathEnsemble& ens, std::size_t n_probes,
                                   const ProbeBox& box, std::uint64_t seed) {
  if (n_probes < 1) throw ConfigError("verify_hypotheses needs at least one probe");
  const TimeGrid& grid = ens.grid();
  const LevyMeasure& levy = ens.levy();
  const std::size_t J = levy.size();
  const std::vector<double> w = levy.weights();
  HypothesisReport r;
  r.terminal.name = "terminal";
  r.driver.name = "driver";
  r.jump.name = "jump";

  const std::vector<double> x1 = terminal_values(sc.xi1, ens);
  const std::vector<double> x2 = terminal_values(sc.xi2, ens);
  for (std::size_t n = 0; n < ens.n_paths(); ++n) {
    std::ostringstream os;
    os << "path " << n << ": xi1=" << x1[n] << " xi2=" << x2[n];
    record(r.terminal, x1[n] - x2[n], std::max(std::abs(x1[n]), std::abs(x2[n])), os.str());
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<std::size_t> node(0, grid.steps());
  std::uniform_int_distribution<std::size_t> path(0, ens.n_paths() - 1);
  std::vector<double> k1(J), k2(J);
  for (std::size_t p = 0; p < n_probes; ++p) {
    const std::size_t i = node(rng);
    const std::size_t n = path(rng);
    const double t = grid.time(i);
    const double y = box.y * unit(rng);
    const double z = box.z * unit(rng);
    for (std::size_t j = 0; j < J; ++j) {
      k1[j] = box.k * unit(rng);
      k2[j] = box.k * unit(rng);
    }
    double m1 = box.mean * unit(rng);
    double m2 = box.mean * unit(rng);
    if (m1 < m2) std::swap(m1, m2);

    const double g1 = sc.g1.eval({n, i, t, y, z, k1, std::span<const double>(&m1, 1)});
    const double g2 = sc.g2.eval({n, i, t, y, z, k1, std::span<const double>(&m2, 1)});
    {
      std::ostringstream os;
      os << "ybar1=" << m1 << " ybar2=" << m2 << " g1=" << g1 << " g2=" << g2;
      record(r.driver, g1 - g2, std::max(std::abs(g1), std::abs(g2)), describe(t, y, z, k1, os.str()));
    }

    const double a = sc.g2.eval({n, i, t, y, z, k1, std::span<const double>(&m2, 1)});
    const double b = sc.g2.eval({n, i, t, y, z, k2, std::span<const double>(&m2, 1)});
    double bound = 0.0;
    for (std::size_t j = 0; j < J; ++j) bound += sc.eta_bound(t, j) * (k1[j] - k2[j]) * w[j];
    std::ostringstream os;
    os << "k2=(";
    for (std::size_t j = 0; j < J; ++j) os << (j ? "," : "") << k2[j];
    os << ") ybar=" << m2 << " g2(k1)-g2(k2)=" << a - b << " bound=" << bound;
    record(r.jump, (a - b) - bound, std::max({std::abs(a), std::abs(b), std::abs(bound)}),
           describe(t, y, z, k1, os.str()));
  }

  r.lipschitz1 = from_probe("lipschitz_g1", check_lipschitz(sc.g1, grid, levy, box, 1000, seed + 1));
  r.lipschitz2 = from_probe("lipschitz_g2", check_lipschitz(sc.g2, grid, levy, box, 1000, seed + 2));
  return r;
}

ComparisonReport run_comparison(const ComparisonScenario& sc, const ConditionalExpectation& cexp,
                                const ComparisonSettings& settings) {
  ComparisonReport rep;
  rep.hypotheses = verify_hypotheses(sc, cexp.ensemble(), settings.n_probes, settings.box);
  std::ostringstream method;
  method << "batch minima over " << settings.batches << " path batches; pass if min margin >= -"
         << settings.threshold_se << " SE";
  rep.se_method = method.str();
  if (!rep.hypotheses.all_passed() && !settings.override_hypotheses) return rep;

  MeanFreezeIteration it1(sc.g1, sc.xi1, cexp, settings.picard);
  MeanFreezeIteration it2(sc.g2, sc.xi2, cexp, settings.picard);
  while (!(it1.done() && it2.done())) {
    if (!it1.done()) it1.step();
    if (!it2.done()) it2.step();
    const MarginStats m = margins(it1.current(), it2.current(), settings.batches);
    rep.iterate_min.push_back(m.global_min);
    rep.iterate_se.push_back(m.global_se);
    if (m.global_min < -settings.threshold_se * m.global_se - 1e-12) rep.iterates_ordered = false;
  }
  const MarginStats m = margins(it1.current(), it2.current(), settings.batches);
  rep.margin_min = m.min;
  rep.margin_max = m.max;
  rep.margin_mean = m.mean;
  rep.margin_se = m.se;
  rep.global_min = m.global_min;
  rep.global_se = m.global_se;
  rep.argmin_node = m.argmin;
  rep.report1 = it1.report();
  rep.report2 = it2.report();
  rep.solved = true;
  rep.passed = m.global_min >= -settings.threshold_se * m.global_se - 1e-12;
  return rep;
}

}  // namespace mfbsde
