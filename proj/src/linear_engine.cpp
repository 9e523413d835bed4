#include "mfbsde/linear_engine.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mfbsde/errors.hpp"

namespace mfbsde {

namespace {

std::vector<double> cumulative_alpha1(const LinearCoefficients& c, const TimeGrid& grid) {
  std::vector<double> a(grid.nodes(), 0.0);
  for (std::size_t i = 0; i < grid.steps(); ++i) a[i + 1] = a[i] + c.alpha1(grid.time(i)) * grid.dt();
  return a;
}

struct MeanSe {
  double mean;
  double se;
};

template <class F>
MeanSe path_mean(std::size_t N, F&& f) {
  double s = 0.0, s2 = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double v = f(n);
    s += v;
    s2 += v * v;
  }
  const double m = s / static_cast<double>(N);
  const double var = N > 1 ? std::max(0.0, (s2 - N * m * m) / static_cast<double>(N - 1)) : 0.0;
  return {m, std::sqrt(var / static_cast<double>(N))};
}

std::vector<Eigen::Index> window_indices(const VolterraSystem& sys, std::size_t first, std::size_t last) {
  std::vector<Eigen::Index> idx;
  for (std::size_t b = 0; b < sys.blocks(); ++b) {
    for (std::size_t i = first; i <= last; ++i) idx.push_back(static_cast<Eigen::Index>(sys.index(b, i)));
  }
  return idx;
}

}  // namespace

double trapezoid_tail_weight(const TimeGrid& grid, std::size_t i, std::size_t l) {
  const std::size_t M = grid.steps();
  if (i >= M || l < i) return 0.0;
  return (l == i || l == M) ? 0.5 * grid.dt() : grid.dt();
}

GammaEnsemble simulate_gamma(const LinearCoefficients& c, const PathEnsemble& ens) {
  const TimeGrid& grid = ens.grid();
  const LevyMeasure& levy = ens.levy();
  require_tilt_positive(grid, levy, c.eta1, "simulate_gamma");
  const std::size_t M = grid.steps();
  const std::size_t J = levy.size();
  const std::size_t N = ens.n_paths();
  const double dt = grid.dt();
  std::vector<double> b(M), drift(M), lj(M * J);
  for (std::size_t i = 0; i < M; ++i) {
    const double t = grid.time(i);
    b[i] = c.beta1(t);
    double d = (c.alpha1(t) - 0.5 * b[i] * b[i]) * dt;
    for (std::size_t j = 0; j < J; ++j) {
      const double e = c.eta1(t, j);
      lj[i * J + j] = std::log1p(e);
      d -= e * ens.intensity(i, j) * dt;
    }
    drift[i] = d;
  }
  GammaEnsemble g(N, M + 1);
#pragma omp parallel for schedule(static)
  for (long long nn = 0; nn < static_cast<long long>(N); ++nn) {
    const auto n = static_cast<std::size_t>(nn);
    double lg = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      lg += b[i] * ens.dw(n, i) + drift[i];
      for (std::size_t j = 0; j < J; ++j) lg += lj[i * J + j] * ens.jumps(n, i, j);
      g.running(n, i + 1) = std::exp(lg);
    }
  }
  return g;
}

double mean_gamma(const LinearCoefficients& c, const TimeGrid& grid, std::size_t i, std::size_t l) {
  if (l < i) throw ConfigError("mean_gamma needs t <= s");
  double s = 0.0;
  for (std::size_t r = i; r < l; ++r) s += c.alpha1(grid.time(r)) * grid.dt();
  return std::exp(s);
}

RunningTerm deterministic_running_term(const LinearCoefficients& c, const TimeGrid& grid) {
  const std::vector<double> a = cumulative_alpha1(c, grid);
  std::vector<double> gam(grid.nodes());
  for (std::size_t i = 0; i < grid.nodes(); ++i) gam[i] = c.gamma(grid.time(i));
  RunningTerm r;
  r.weighted_mean = [a, gam](std::size_t i, std::size_t l) { return std::exp(a[l] - a[i]) * gam[l]; };
  r.brownian_sensitivity = [](std::size_t, std::size_t) { return 0.0; };
  r.jump_sensitivity = [](std::size_t, std::size_t, std::size_t) { return 0.0; };
  r.pathwise = [gam](std::size_t, std::size_t i) { return gam[i]; };
  return r;
}

VolterraSystem assemble_system(const LinearCoefficients& c, const PathEnsemble& ens, const GammaEnsemble& gamma,
                               MeanSystemForm form, const RunningTerm* running) {
  const TimeGrid& grid = ens.grid();
  const LevyMeasure& levy = ens.levy();
  c.validate(grid, levy);
  const std::size_t M = grid.steps();
  const std::size_t J = levy.size();
  const std::size_t N = ens.n_paths();
  if (gamma.n_paths() != N) throw ConfigError("Gamma ensemble does not match the path ensemble");

  VolterraSystem sys;
  sys.grid = grid;
  sys.weights = levy.weights();
  sys.form = form;
  const std::size_t S = sys.size();
  sys.kernel = Eigen::MatrixXd::Zero(S, S);
  sys.source = Eigen::VectorXd::Zero(S);
  sys.source_se = Eigen::VectorXd::Zero(S);

  const std::vector<double> a = cumulative_alpha1(c, grid);
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t l = i; l <= M; ++l) {
      const double t = grid.time(l);
      const double w = trapezoid_tail_weight(grid, i, l) * std::exp(a[l] - a[i]);
      sys.kernel(sys.index(0, i), sys.index(0, l)) = w * c.alpha2(t);
      sys.kernel(sys.index(0, i), sys.index(1, l)) = w * c.beta2(t);
      for (std::size_t j = 0; j < J; ++j) {
        sys.kernel(sys.index(0, i), sys.index(2 + j, l)) = w * c.eta2(t, j) * sys.weights[j];
      }
    }
    if (form == MeanSystemForm::kScaledRows) {
      const double t = grid.time(i);
      sys.kernel.row(sys.index(1, i)) = c.beta1(t) * sys.kernel.row(sys.index(0, i));
      for (std::size_t j = 0; j < J; ++j) {
        sys.kernel.row(sys.index(2 + j, i)) = c.eta1(t, j) * sys.kernel.row(sys.index(0, i));
      }
    }
  }

  const RunningTerm det = deterministic_running_term(c, grid);
  const RunningTerm& rt = running ? *running : det;
  const MalliavinEvaluator me(c.terminal, ens);

  for (std::size_t i = 0; i <= M; ++i) {
    const double t = grid.time(i);
    const MeanSe xg = path_mean(N, [&](std::size_t n) { return me.value(n) * gamma(n, i, M); });
    const MeanSe bg = path_mean(N, [&](std::size_t n) { return me.b(t, n) * gamma(n, i, M); });
    double run = 0.0, run_b = 0.0;
    std::vector<double> run_n(J, 0.0);
    for (std::size_t l = i; l <= M; ++l) {
      const double w = trapezoid_tail_weight(grid, i, l);
      if (w == 0.0) continue;
      run += w * rt.weighted_mean(i, l);
      run_b += w * rt.brownian_sensitivity(i, l);
      for (std::size_t j = 0; j < J; ++j) run_n[j] += w * rt.jump_sensitivity(i, l, j);
    }
    const double f1 = xg.mean + run;
    sys.source(sys.index(0, i)) = f1;
    sys.source_se(sys.index(0, i)) = xg.se;
    double f2 = bg.mean + run_b;
    if (form == MeanSystemForm::kScaledRows) f2 += c.beta1(t) * f1;
    sys.source(sys.index(1, i)) = f2;
    sys.source_se(sys.index(1, i)) = bg.se;
    for (std::size_t j = 0; j < J; ++j) {
      const MeanSe ng = path_mean(N, [&](std::size_t n) { return me.n(t, j, n) * gamma(n, i, M); });
      double f3 = ng.mean + run_n[j];
      if (form == MeanSystemForm::kScaledRows) f3 += c.eta1(t, j) * f1;
      sys.source(sys.index(2 + j, i)) = f3;
      sys.source_se(sys.index(2 + j, i)) = ng.se;
    }
  }
  return sys;
}

MeanVector MeanVector::from_stacked(const Eigen::VectorXd& v, std::size_t nodes, std::size_t atoms) {
  MeanVector out;
  out.ybar.assign(v.data(), v.data() + nodes);
  out.zbar.assign(v.data() + nodes, v.data() + 2 * nodes);
  for (std::size_t j = 0; j < atoms; ++j) {
    out.kbar.emplace_back(v.data() + (2 + j) * nodes, v.data() + (3 + j) * nodes);
  }
  return out;
}

Eigen::VectorXd MeanVector::stacked() const {
  const std::size_t nodes = ybar.size();
  Eigen::VectorXd v((2 + kbar.size()) * nodes);
  for (std::size_t i = 0; i < nodes; ++i) {
    v(i) = ybar[i];
    v(nodes + i) = zbar[i];
    for (std::size_t j = 0; j < kbar.size(); ++j) v((2 + j) * nodes + i) = kbar[j][i];
  }
  return v;
}

double operator_norm_estimate(const VolterraSystem& sys, std::size_t first, std::size_t last) {
  if (first >= last || last >= sys.grid.nodes()) throw ConfigError("operator norm window must satisfy a < b <= M");
  const std::vector<Eigen::Index> idx = window_indices(sys, first, last);
  const std::size_t count = last - first + 1;
  Eigen::VectorXd sq(idx.size());
  for (std::size_t b = 0; b < sys.blocks(); ++b) {
    const double w = b < 2 ? 1.0 : sys.weights[b - 2];
    for (std::size_t k = 0; k < count; ++k) sq(b * count + k) = std::sqrt(w);
  }
  Eigen::MatrixXd B = sys.kernel(idx, idx);
  B = sq.asDiagonal() * B * sq.cwiseInverse().asDiagonal();
  if (B.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  const Eigen::MatrixXd G = B.transpose() * B;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(G.rows()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 200000; ++it) {
    const Eigen::VectorXd w = G * v;
    const double next = v.dot(w);
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    v = w / nw;
    if (it > 2 && std::abs(next - lambda) <= 1e-14 * std::abs(next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

MeanVector neumann_solve(const VolterraSystem& sys, const NeumannOptions& opts, NeumannReport* report) {
  const std::size_t nodes = sys.grid.nodes();
  Eigen::VectorXd V = Eigen::VectorXd::Zero(sys.size());
  std::vector<bool> solved(sys.size(), false);
  std::size_t hi = nodes - 1;
  NeumannReport rep;
  while (true) {
    std::size_t cmax = hi + 1;
    if (opts.max_window_nodes > 0) cmax = std::min(cmax, opts.max_window_nodes);
    std::size_t cmin = std::min<std::size_t>(3, cmax);
    auto norm_of = [&](std::size_t c) { return c < 2 ? 0.0 : operator_norm_estimate(sys, hi + 1 - c, hi); };
    double nmin = norm_of(cmin);
    if (nmin > opts.target_norm) {
      std::ostringstream os;
      os << "no window of at least 2 steps ending at t = " << sys.grid.time(hi) << " has kernel norm <= "
         << opts.target_norm << " (got " << nmin << "); use a finer grid or smaller coefficients";
      throw ConfigError(os.str());
    }
    std::size_t good = cmin;
    double good_norm = nmin;
    if (norm_of(cmax) <= opts.target_norm) {
      good = cmax;
      good_norm = norm_of(cmax);
    } else {
      std::size_t bad = cmax;
      while (bad - good > 1) {
        const std::size_t mid = (good + bad) / 2;
        const double nm = norm_of(mid);
        if (nm <= opts.target_norm) {
          good = mid;
          good_norm = nm;
        } else {
          bad = mid;
        }
      }
    }
    const std::size_t lo = hi + 1 - good;
    const std::vector<Eigen::Index> w = window_indices(sys, lo, hi);
    std::vector<Eigen::Index> r;
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(sys.size()); ++k) {
      if (solved[static_cast<std::size_t>(k)]) r.push_back(k);
    }
    Eigen::VectorXd src = sys.source(w);
    if (!r.empty()) src += sys.kernel(w, r) * V(r);
    const Eigen::MatrixXd Aww = sys.kernel(w, w);
    Eigen::VectorXd term = src, sum = src;
    const double scale = std::max(1.0, src.cwiseAbs().maxCoeff());
    int terms = 1;
    while (true) {
      term = Aww * term;
      if (term.cwiseAbs().maxCoeff() < opts.series_tol * scale) break;
      if (terms >= opts.max_terms) throw NumericalError("Neumann series did not converge");
      sum += term;
      ++terms;
    }
    V(w) = sum;
    for (Eigen::Index k : w) solved[static_cast<std::size_t>(k)] = true;
    rep.windows.emplace_back(lo, hi);
    rep.norms.push_back(good_norm);
    rep.terms.push_back(terms);
    if (lo == 0) break;
    hi = lo - 1;
  }
  if (report) *report = rep;
  return MeanVector::from_stacked(V, nodes, sys.weights.size());
}

MeanVector direct_solve(const VolterraSystem& sys) {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(sys.size(), sys.size());
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(I - sys.kernel);
  if (!lu.isInvertible()) throw NumericalError("mean system I - A is singular");
  return MeanVector::from_stacked(lu.solve(sys.source), sys.grid.nodes(), sys.weights.size());
}

ClosedFormResult y_closed_formula(const LinearCoefficients& c, const PathEnsemble& ens, const GammaEnsemble& gamma,
                                  const MeanVector& v, const RunningTerm* running) {
  const TimeGrid& grid = ens.grid();
  const std::size_t M = grid.steps();
  const std::size_t J = ens.atoms();
  const std::vector<double> w = ens.levy().weights();
  const RunningTerm det = deterministic_running_term(c, grid);
  const RunningTerm& rt = running ? *running : det;
  std::vector<double> h(M + 1);
  for (std::size_t l = 0; l <= M; ++l) {
    const double t = grid.time(l);
    h[l] = c.alpha2(t) * v.ybar[l] + c.beta2(t) * v.zbar[l];
    for (std::size_t j = 0; j < J; ++j) h[l] += c.eta2(t, j) * v.kbar[j][l] * w[j];
  }
  const std::vector<double> xi = terminal_values(c.terminal, ens);
  const MeanSe r = path_mean(ens.n_paths(), [&](std::size_t n) {
    double acc = xi[n] * gamma.from_zero(n, M);
    for (std::size_t l = 0; l <= M; ++l) {
      acc += trapezoid_tail_weight(grid, 0, l) * gamma.from_zero(n, l) * (h[l] + rt.pathwise(n, l));
    }
    return acc;
  });
  return {r.mean, r.se, v.ybar};
}

QSpecialResult q_special_solve(const LinearCoefficients& c, const PathEnsemble& ens) {
  const TimeGrid& grid = ens.grid();
  c.validate(grid, ens.levy());
  const std::size_t M = grid.steps();
  const double h = 0.5 * grid.dt();
  const GirsanovDensity dens = girsanov_density(ens, c.beta1, c.eta1);
  const std::vector<double> xi = terminal_values(c.terminal, ens);
  const MeanSe wq = path_mean(ens.n_paths(), [&](std::size_t n) { return xi[n] * dens(n, M); });
  const PathEnsemble q = shift_to_q(ens, c.beta1, c.eta1);
  const std::vector<double> xq = terminal_values(c.terminal, q);
  const MeanSe sq = path_mean(q.n_paths(), [&](std::size_t n) { return xq[n]; });

  // m' = -(alpha1 + alpha2) m - gamma, trapezoid backward; m = A * E_Q[xi] + B.
  std::vector<double> A(M + 1), Bv(M + 1);
  A[M] = 1.0;
  Bv[M] = 0.0;
  for (std::size_t i = M; i-- > 0;) {
    const double ai = c.alpha1(grid.time(i)) + c.alpha2(grid.time(i));
    const double an = c.alpha1(grid.time(i + 1)) + c.alpha2(grid.time(i + 1));
    if (h * ai >= 1.0) throw ConfigError("q_special_solve: step too large for the mean ODE");
    A[i] = A[i + 1] * (1.0 + h * an) / (1.0 - h * ai);
    Bv[i] = (Bv[i + 1] * (1.0 + h * an) + h * (c.gamma(grid.time(i)) + c.gamma(grid.time(i + 1)))) / (1.0 - h * ai);
  }
  QSpecialResult r;
  r.eq_xi_weighted = wq.mean;
  r.eq_xi_shifted = sq.mean;
  r.y0_weighted = A[0] * wq.mean + Bv[0];
  r.se_weighted = std::abs(A[0]) * wq.se;
  r.y0_shifted = A[0] * sq.mean + Bv[0];
  r.se_shifted = std::abs(A[0]) * sq.se;
  r.eq_y.resize(M + 1);
  for (std::size_t i = 0; i <= M; ++i) r.eq_y[i] = A[i] * wq.mean + Bv[i];
  const double comb = std::hypot(r.se_weighted, r.se_shifted);
  r.discrepancy_z = comb > 0.0 ? std::abs(r.y0_weighted - r.y0_shifted) / comb
                               : (r.y0_weighted == r.y0_shifted ? 0.0 : INFINITY);
  return r;
}

}  // namespace mfbsde
