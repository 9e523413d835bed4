#include "mfbsde/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "mfbsde/comparison.hpp"
#include "mfbsde/linear_engine.hpp"
#include "mfbsde/picard.hpp"
#include "mfbsde/recursive_utility.hpp"
#include "mfbsde/regression.hpp"

#ifndef MFBSDE_VERSION
#define MFBSDE_VERSION "0.0.0"
#endif

namespace mfbsde {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Stats {
  double mean = 0.0;
  double se = 0.0;
};

Stats node_stats(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += x;
  const double m = s / n;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0};
}

double quantile(std::vector<double> v, double q) {
  const std::size_t k = static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1)));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

const char* module_of(Mode m) {
  switch (m) {
    case Mode::kPicard: return "picard_solver";
    case Mode::kLinear: return "linear_engine";
    case Mode::kCompare: return "comparison_harness";
    case Mode::kUtility: return "recursive_utility";
    case Mode::kQCheck: return "linear_engine";
  }
  return "?";
}

const char* inequality_of(const std::string& check) {
  if (check == "terminal") return "xi1 >= xi2 pathwise";
  if (check == "driver") return "g1(t,y,z,k,ybar1) >= g2(t,y,z,k,ybar2) whenever ybar1 >= ybar2";
  if (check == "jump") return "g2(t,y,z,k1,ybar) - g2(t,y,z,k2,ybar) >= sum_j eta(t,zeta_j) (k1_j - k2_j) w_j";
  return "Lipschitz bound on the driver";
}

RegressionBasis basis_of(const ScenarioConfig& cfg) {
  RegressionBasis b;
  b.degree = cfg.solver.degree;
  b.ridge_factor = cfg.solver.ridge;
  return b;
}

PicardSettings picard_of(const ScenarioConfig& cfg) {
  PicardSettings s;
  s.tol = cfg.solver.tol;
  s.max_iter = cfg.solver.max_iter;
  return s;
}

nlohmann::json report_json(const PicardReport& r) {
  return {{"scheme", r.scheme},     {"iterations", r.iterations}, {"converged", r.converged},
          {"ridge_factor", r.ridge_factor}, {"y0", r.y0},          {"y0_se", r.y0_se},
          {"final_delta", r.delta.empty() ? 0.0 : r.delta.back()}};
}

void iteration_rows(CsvTable& t, const PicardReport& r, const std::string& prefix) {
  for (std::size_t n = 0; n < r.delta.size(); ++n) {
    t.at_index(n + 1, prefix + "delta", r.delta[n]);
    t.at_index(n + 1, prefix + "integrated_delta", r.integrated_delta[n]);
    if (n < r.ratio.size()) t.at_index(n + 1, prefix + "ratio", r.ratio[n]);
  }
}

void solution_rows(CsvTable& t, const SolutionGrid& s) {
  const TimeGrid& g = s.grid();
  for (std::size_t i = 0; i < s.nodes(); ++i) {
    const double ti = g.time(i);
    t.at_node(i, ti, "ybar", s.ybar(i), node_stats(s.y_node(i)).se);
    t.at_node(i, ti, "zbar", s.zbar(i), node_stats(s.z_node(i)).se);
    for (std::size_t j = 0; j < s.atoms(); ++j) {
      t.at_node(i, ti, "kbar_" + std::to_string(j), s.kbar(i, j), node_stats(s.k_node(i, j)).se);
    }
  }
}

void run_picard(const ScenarioConfig& cfg, RunResult& out) {
  const TimeGrid grid = cfg.grid();
  const LevyMeasure levy = cfg.levy();
  const PathEnsemble ens = simulate_ensemble(grid, levy, cfg.n_paths, cfg.seed);
  const ConditionalExpectation ce(ens, basis_of(cfg));
  const DriverSpec f = build_driver(cfg.driver, grid, levy);
  const MeanFunctional phi = build_mean(cfg.driver, levy);
  const TerminalCondition tc = build_terminal(cfg.terminal);
  const PicardResult r = cfg.solver.scheme == "full" ? picard_full_freeze(f, phi, tc, ce, picard_of(cfg))
                                                     : picard_mean_freeze(f, tc, ce, picard_of(cfg));
  CsvTable sol{"solution.csv", {}};
  sol.scalar("y0", r.report.y0, r.report.y0_se);
  solution_rows(sol, r.solution);
  CsvTable rep{"picard_report.csv", {}};
  iteration_rows(rep, r.report, "");
  out.tables = {sol, rep};

  const ProbeReport lip = check_lipschitz(f, grid, levy);
  nlohmann::json d = report_json(r.report);
  d["lipschitz_probe"] = {{"passed", lip.passed}, {"worst", lip.worst}, {"bound", lip.bound}};
  if (cfg.solver.scheme == "full") d["default_beta"] = default_beta(f, phi);
  out.diagnostics["picard_solver"] = d;
  if (!r.report.converged) {
    out.exit_code = kExitNonConvergence;
    out.message = "[picard_solver] no convergence after " + std::to_string(r.report.iterations) +
                  " iterations (last delta " + fmt(r.report.delta.empty() ? 0.0 : r.report.delta.back()) + ")";
  } else {
    out.message = "Y(0) = " + fmt(r.report.y0) + " +- " + fmt(r.report.y0_se);
  }
}

void run_linear(const ScenarioConfig& cfg, RunResult& out) {
  const TimeGrid grid = cfg.grid();
  const LevyMeasure levy = cfg.levy();
  const LinearCoefficients c = build_linear(cfg.driver, cfg.terminal);
  c.validate(grid, levy);
  const PathEnsemble ens = simulate_ensemble(grid, levy, cfg.n_paths, cfg.seed);
  const GammaEnsemble gamma = simulate_gamma(c, ens);
  const MeanSystemForm form =
      cfg.solver.form == "scaled" ? MeanSystemForm::kScaledRows : MeanSystemForm::kRepresentation;
  const VolterraSystem sys = assemble_system(c, ens, gamma, form);
  NeumannOptions no;
  no.target_norm = cfg.solver.target_norm;
  NeumannReport nr;
  const MeanVector v = neumann_solve(sys, no, &nr);
  const MeanVector direct = direct_solve(sys);
  const ClosedFormResult cf = y_closed_formula(c, ens, gamma, v);

  CsvTable mv{"mean_vector.csv", {}};
  mv.scalar("y0", cf.y0, cf.se);
  const std::size_t nodes = grid.nodes();
  for (std::size_t i = 0; i < nodes; ++i) {
    const double t = grid.time(i);
    mv.at_node(i, t, "ybar", v.ybar[i]);
    mv.at_node(i, t, "zbar", v.zbar[i]);
    for (std::size_t j = 0; j < levy.size(); ++j) mv.at_node(i, t, "kbar_" + std::to_string(j), v.kbar[j][i]);
    mv.at_node(i, t, "source_y", sys.source(sys.index(0, i)), sys.source_se(sys.index(0, i)));
    mv.at_node(i, t, "source_z", sys.source(sys.index(1, i)), sys.source_se(sys.index(1, i)));
    for (std::size_t j = 0; j < levy.size(); ++j) {
      mv.at_node(i, t, "source_k_" + std::to_string(j), sys.source(sys.index(2 + j, i)),
                 sys.source_se(sys.index(2 + j, i)));
    }
    mv.at_node(i, t, "ybar_closed", cf.ybar[i]);
  }
  CsvTable kt{"kernel.csv", {}};
  for (std::size_t w = 0; w < nr.windows.size(); ++w) {
    kt.at_index(w, "window_first_node", static_cast<double>(nr.windows[w].first));
    kt.at_index(w, "window_last_node", static_cast<double>(nr.windows[w].second));
    kt.at_index(w, "window_norm", nr.norms[w]);
    kt.at_index(w, "window_terms", static_cast<double>(nr.terms[w]));
  }
  out.tables = {mv, kt};
  const double gap = (v.stacked() - direct.stacked()).cwiseAbs().maxCoeff();
  out.diagnostics["linear_engine"] = {{"form", cfg.solver.form},
                                      {"windows", nr.windows.size()},
                                      {"max_window_norm", *std::max_element(nr.norms.begin(), nr.norms.end())},
                                      {"neumann_vs_direct", gap},
                                      {"y0", cf.y0},
                                      {"y0_se", cf.se}};
  out.message = "Y(0) = " + fmt(cf.y0) + " +- " + fmt(cf.se);
}

void run_compare(const ScenarioConfig& cfg, RunResult& out) {
  const TimeGrid grid = cfg.grid();
  const LevyMeasure levy = cfg.levy();
  const PathEnsemble ens = simulate_ensemble(grid, levy, cfg.n_paths, cfg.seed);
  const ConditionalExpectation ce(ens, basis_of(cfg));
  ComparisonScenario sc{build_driver(cfg.driver, grid, levy), build_driver(cfg.compare.driver2, grid, levy),
                        build_terminal(cfg.terminal), build_terminal(cfg.compare.terminal2),
                        cfg.compare.eta_bound.fn()};
  ComparisonSettings s;
  s.picard = picard_of(cfg);
  s.n_probes = cfg.compare.probes;
  s.override_hypotheses = cfg.compare.override_hypotheses;
  const ComparisonReport r = run_comparison(sc, ce, s);

  CsvTable hyp{"hypotheses.csv", {}};
  nlohmann::json hj = nlohmann::json::array();
  std::string violated;
  for (const HypothesisCheck* c : r.hypotheses.checks()) {
    hyp.scalar(c->name + ".passed", c->passed ? 1.0 : 0.0);
    hyp.scalar(c->name + ".probes", static_cast<double>(c->probes));
    hyp.scalar(c->name + ".violations", static_cast<double>(c->violations));
    hyp.scalar(c->name + ".worst_slack", c->worst);
    hj.push_back({{"name", c->name},
                  {"inequality", inequality_of(c->name)},
                  {"passed", c->passed},
                  {"probes", c->probes},
                  {"violations", c->violations},
                  {"worst_slack", c->worst},
                  {"counterexample", c->counterexample}});
    if (!c->passed) {
      violated += "\n  " + c->name + ": " + inequality_of(c->name) + " violated in " + std::to_string(c->violations) +
                  " of " + std::to_string(c->probes) + " probes; first: " + c->counterexample;
    }
  }
  out.tables.push_back(hyp);

  nlohmann::json d = {{"hypotheses", hj}, {"solved", r.solved}, {"override", s.override_hypotheses}};
  if (r.solved) {
    CsvTable m{"comparison.csv", {}};
    m.scalar("global_min", r.global_min, r.global_se);
    m.scalar("argmin_node", static_cast<double>(r.argmin_node));
    for (std::size_t i = 0; i < r.margin_min.size(); ++i) {
      const double t = grid.time(i);
      m.at_node(i, t, "margin_min", r.margin_min[i], r.margin_se[i]);
      m.at_node(i, t, "margin_max", r.margin_max[i]);
      m.at_node(i, t, "margin_mean", r.margin_mean[i]);
    }
    CsvTable it{"comparison_iterates.csv", {}};
    for (std::size_t n = 0; n < r.iterate_min.size(); ++n) it.at_index(n + 1, "iterate_min", r.iterate_min[n], r.iterate_se[n]);
    iteration_rows(it, r.report1, "eq1.");
    iteration_rows(it, r.report2, "eq2.");
    out.tables.push_back(m);
    out.tables.push_back(it);
    d["global_min"] = r.global_min;
    d["global_se"] = r.global_se;
    d["argmin_node"] = r.argmin_node;
    d["passed"] = r.passed;
    d["se_method"] = r.se_method;
    d["iterates_ordered"] = r.iterates_ordered;
    d["eq1"] = report_json(r.report1);
    d["eq2"] = report_json(r.report2);
  }
  out.diagnostics["comparison_harness"] = d;

  if (!r.hypotheses.all_passed() && !s.override_hypotheses) {
    out.exit_code = kExitHypothesis;
    out.message = "[comparison_harness] hypothesis failure, solve skipped:" + violated;
  } else if (r.solved && (!r.report1.converged || !r.report2.converged)) {
    out.exit_code = kExitNonConvergence;
    out.message = "[comparison_harness] Picard iteration did not converge";
  } else if (r.solved && !r.passed) {
    out.exit_code = kExitHypothesis;
    out.message = "[comparison_harness] ordering Y1 >= Y2 not certified: min margin " + fmt(r.global_min) +
                  " at node " + std::to_string(r.argmin_node) + " (SE " + fmt(r.global_se) + ")" + violated;
  } else {
    out.message = "ordered: min margin " + fmt(r.global_min) + " +- " + fmt(r.global_se) + violated;
  }
}

void run_utility(const ScenarioConfig& cfg, RunResult& out) {
  const TimeGrid grid = cfg.grid();
  const LevyMeasure levy = cfg.levy();
  const WealthParams wp = build_wealth(cfg.utility);
  const UtilityCoefficients uc = build_utility(cfg.utility);
  const PathEnsemble ens = simulate_ensemble(grid, levy, cfg.n_paths, cfg.seed);
  const DeterministicOptimum opt = optimal_deterministic_pi(wp, uc, ens);
  const ControlProcess pi =
      cfg.utility.control == "optimal" ? opt.pi : ControlProcess::constant(cfg.utility.pi, grid.nodes());
  const UtilityValue jc = evaluate_J(wp, uc, pi, ens);
  const UtilityValue jd = evaluate_J_dual(wp, uc, pi, ens);

  const ConditionalExpectation ce(ens, basis_of(cfg));
  const AdjointState adj = optimal_pi(uc, ce);
  const std::size_t N = ens.n_paths();
  const UtilityValue jp = evaluate_J_dual(wp, uc, ControlProcess::adapted(N, grid.nodes(), adj.pi_hat), ens);

  CsvTable u{"utility.csv", {}};
  u.scalar("J_closed", jc.j, jc.se);
  u.scalar("J_dual", jd.j, jd.se);
  u.scalar("J_lambda_over_p", jp.j, jp.se);
  u.scalar("total_consumption_optimal", opt.total_consumption);
  u.scalar("p_floored", static_cast<double>(adj.floored));
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const double t = grid.time(i);
    std::span<const double> ph(adj.pi_hat.data() + i * N, N);
    std::span<const double> pp(adj.p.data() + i * N, N);
    std::span<const double> lam(adj.lambda.lambda.data() + i * N, N);
    const Stats ls = node_stats(lam);
    u.at_node(i, t, "pi", pi(0, i));
    u.at_node(i, t, "pi_optimal", opt.pi(0, i));
    u.at_node(i, t, "scaled_p", opt.scaled_p[i]);
    u.at_node(i, t, "lambda_mean", adj.lambda.mean[i]);
    u.at_node(i, t, "lambda_mc", ls.mean, ls.se);
    const Stats ps = node_stats(pp);
    u.at_node(i, t, "p_mean", ps.mean, ps.se);
    const Stats hs = node_stats(ph);
    std::vector<double> hv(ph.begin(), ph.end());
    u.at_node(i, t, "pi_hat_mean", hs.mean, hs.se);
    u.at_node(i, t, "pi_hat_q05", quantile(hv, 0.05));
    u.at_node(i, t, "pi_hat_q50", quantile(hv, 0.50));
    u.at_node(i, t, "pi_hat_q95", quantile(hv, 0.95));
  }

  CsvTable pt{"perturbations.csv", {}};
  std::size_t improved = 0;
  double worst_z = -1e300;
  const std::vector<ControlProcess> family = perturbations(pi, grid, cfg.utility.perturbations);
  for (std::size_t k = 0; k < family.size(); ++k) {
    const UtilityValue v = evaluate_J(wp, uc, family[k], ens);
    const double comb = std::hypot(jc.se, v.se);
    pt.at_index(k, "J", v.j, v.se);
    pt.at_index(k, "J_minus_base", v.j - jc.j, comb);
    const double z = comb > 0.0 ? (v.j - jc.j) / comb : (v.j > jc.j ? 1e300 : 0.0);
    worst_z = std::max(worst_z, z);
    if (v.j > jc.j + 3.0 * comb + 1e-12) ++improved;
  }
  out.tables = {u, pt};
  out.diagnostics["recursive_utility"] = {{"control", cfg.utility.control},
                                          {"J_closed", jc.j},
                                          {"J_closed_se", jc.se},
                                          {"J_dual", jd.j},
                                          {"J_dual_se", jd.se},
                                          {"J_lambda_over_p", jp.j},
                                          {"p_floored", adj.floored},
                                          {"perturbations", family.size()},
                                          {"perturbations_better_by_3se", improved},
                                          {"max_perturbation_z", worst_z}};
  out.message = "J = " + fmt(jc.j) + " +- " + fmt(jc.se) + "; " + std::to_string(improved) + " of " +
                std::to_string(family.size()) + " perturbations better by more than 3 SE";
}

void run_qcheck(const ScenarioConfig& cfg, RunResult& out) {
  const TimeGrid grid = cfg.grid();
  const LevyMeasure levy = cfg.levy();
  const LinearCoefficients c = build_linear(cfg.driver, cfg.terminal);
  c.validate(grid, levy);
  const PathEnsemble ens = simulate_ensemble(grid, levy, cfg.n_paths, cfg.seed);
  const QSpecialResult q = q_special_solve(c, ens);
  CsvTable t{"qcheck.csv", {}};
  t.scalar("y0_weighted", q.y0_weighted, q.se_weighted);
  t.scalar("y0_shifted", q.y0_shifted, q.se_shifted);
  t.scalar("eq_xi_weighted", q.eq_xi_weighted);
  t.scalar("eq_xi_shifted", q.eq_xi_shifted);
  t.scalar("discrepancy_z", q.discrepancy_z);
  for (std::size_t i = 0; i < q.eq_y.size(); ++i) t.at_node(i, grid.time(i), "eq_y", q.eq_y[i]);
  out.tables = {t};
  const bool agree = q.discrepancy_z <= 3.0;
  out.diagnostics["linear_engine"] = {{"y0_weighted", q.y0_weighted},
                                      {"y0_shifted", q.y0_shifted},
                                      {"discrepancy_z", q.discrepancy_z},
                                      {"agree_within_3se", agree}};
  if (!agree) {
    out.exit_code = kExitHypothesis;
    out.message = "[linear_engine] weighted and shifted estimates differ by " + fmt(q.discrepancy_z) + " SE";
  } else {
    out.message = "Y(0) weighted " + fmt(q.y0_weighted) + ", shifted " + fmt(q.y0_shifted);
  }
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace

void CsvTable::scalar(std::string stat, double value, std::optional<double> se) {
  rows.push_back({std::nullopt, std::nullopt, std::move(stat), value, se});
}

void CsvTable::at_node(std::size_t node, double t, std::string stat, double value, std::optional<double> se) {
  rows.push_back({node, t, std::move(stat), value, se});
}

void CsvTable::at_index(std::size_t index, std::string stat, double value, std::optional<double> se) {
  rows.push_back({index, std::nullopt, std::move(stat), value, se});
}

std::string CsvTable::body() const {
  std::ostringstream os;
  os << "node,time,statistic,value,se\n";
  for (const CsvRow& r : rows) {
    if (r.node) os << *r.node;
    os << ',';
    if (r.time) os << fmt(*r.time);
    os << ',' << r.statistic << ',' << fmt(r.value) << ',';
    if (r.se) os << fmt(*r.se);
    os << '\n';
  }
  return os.str();
}

RunResult execute(Mode mode, ScenarioConfig cfg, const RunOptions& opts) {
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.paths) cfg.n_paths = *opts.paths;
  RunResult out;
  out.config_hash =
      fnv1a_hex(cfg.canonical + "#mode=" + mode_name(mode) + "\n#seed=" + std::to_string(cfg.seed) +
                "\n#n_paths=" + std::to_string(cfg.n_paths) + "\n");
  std::vector<ConfigIssue> issues = validate_for_mode(cfg, mode);
  if (opts.paths && *opts.paths < 2) issues.push_back({"--paths", "must be >= 2"});
  if (!issues.empty()) {
    out.exit_code = kExitValidation;
    out.message = ValidationError(issues).what();
    return out;
  }
  const std::string module = module_of(mode);
  try {
    switch (mode) {
      case Mode::kPicard: run_picard(cfg, out); break;
      case Mode::kLinear: run_linear(cfg, out); break;
      case Mode::kCompare: run_compare(cfg, out); break;
      case Mode::kUtility: run_utility(cfg, out); break;
      case Mode::kQCheck: run_qcheck(cfg, out); break;
    }
  } catch (const NumericalError& e) {
    out = RunResult{kExitNonConvergence, "[" + module + "] " + e.what(), {}, {}, out.config_hash};
  } catch (const std::runtime_error& e) {
    // ConfigError, DomainError and CapabilityError are all input problems.
    out = RunResult{kExitValidation, "[" + module + "] " + e.what(), {}, {}, out.config_hash};
  }
  return out;
}

int run(Mode mode, ScenarioConfig cfg, const RunOptions& opts, std::ostream& log) {
  namespace fs = std::filesystem;
  const auto start = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  RunResult r = execute(mode, cfg, opts);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.paths) cfg.n_paths = *opts.paths;
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const fs::path dir(opts.out_dir);
  fs::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  for (const CsvTable& t : r.tables) {
    std::ofstream f(dir / t.file, std::ios::binary);
    f << "# manifest=manifest.json config_hash=" << r.config_hash << " mode=" << mode_name(mode) << '\n'
      << t.body();
    if (!f) throw std::runtime_error("cannot write " + (dir / t.file).string());
    files.push_back(t.file);
  }
  nlohmann::json m = {{"artifact", "mfbsde"},
                      {"artifact_version", MFBSDE_VERSION},
                      {"mode", mode_name(mode)},
                      {"config_hash", r.config_hash},
                      {"seed", cfg.seed},
                      {"n_paths", cfg.n_paths},
                      {"steps", cfg.steps},
                      {"horizon", cfg.horizon},
                      {"atoms", cfg.atoms.size()},
                      {"started_utc", started},
                      {"wall_clock_seconds", wall},
                      {"exit_code", r.exit_code},
                      {"message", r.message},
                      {"outputs", files},
                      {"diagnostics", r.diagnostics},
                      {"config", cfg.canonical}};
  std::ofstream mf(dir / "manifest.json");
  mf << m.dump(2) << '\n';
  if (!mf) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  log << mode_name(mode) << ": " << r.message << '\n';
  return r.exit_code;
}

}  // namespace mfbsde
