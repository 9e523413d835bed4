#include "mfbsde/levy_paths.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "mfbsde/errors.hpp"

namespace mfbsde {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::vector<double> TimeGrid::times() const {
  std::vector<double> out(nodes());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = time(i);
  return out;
}

TimeGrid build_grid(double horizon, long long steps) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw ConfigError("grid horizon T must be positive and finite");
  }
  if (steps < 1) throw ConfigError("grid step count M must be at least 1");
  TimeGrid g;
  g.horizon_ = horizon;
  g.steps_ = static_cast<std::size_t>(steps);
  g.dt_ = horizon / static_cast<double>(steps);
  return g;
}

LevyMeasure::LevyMeasure(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
  for (std::size_t j = 0; j < atoms_.size(); ++j) {
    const auto& a = atoms_[j];
    if (a.mark == 0.0 || !std::isfinite(a.mark)) {
      throw ConfigError("Levy atom " + std::to_string(j) + " has a zero or non-finite mark");
    }
    if (!(a.weight > 0.0) || !std::isfinite(a.weight)) {
      throw ConfigError("Levy atom " + std::to_string(j) + " needs a positive finite weight");
    }
    for (std::size_t l = 0; l < j; ++l) {
      if (atoms_[l].mark == a.mark) {
        throw ConfigError("Levy atoms " + std::to_string(l) + " and " + std::to_string(j) +
                          " share the mark " + std::to_string(a.mark));
      }
    }
  }
}

double LevyMeasure::total_mass() const {
  double s = 0.0;
  for (const auto& a : atoms_) s += a.weight;
  return s;
}

std::vector<double> LevyMeasure::marks() const {
  std::vector<double> out;
  for (const auto& a : atoms_) out.push_back(a.mark);
  return out;
}

std::vector<double> LevyMeasure::weights() const {
  std::vector<double> out;
  for (const auto& a : atoms_) out.push_back(a.weight);
  return out;
}

CounterStream::CounterStream(std::uint64_t seed, std::uint64_t path, std::uint64_t source)
    : key_(splitmix64(splitmix64(splitmix64(seed) ^ path) ^ (source * 0xD1B54A32D192ED03ULL))) {}

CounterStream::result_type CounterStream::operator()() {
  ++counter_;
  return splitmix64(key_ ^ splitmix64(counter_));
}

void require_tilt_positive(const TimeGrid& grid, const LevyMeasure& levy, const MarkFn& eta,
                           const char* what) {
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const double t = grid.time(i);
    for (std::size_t j = 0; j < levy.size(); ++j) {
      const double v = eta(t, j);
      if (!(1.0 + v > 0.0) || !std::isfinite(v)) {
        std::ostringstream os;
        os << what << ": 1 + eta must be positive, got eta = " << v << " at (t = " << t
           << ", zeta = " << levy.mark(j) << ")";
        throw DomainError(os.str());
      }
    }
  }
}

PathEnsemble simulate_tilted(const TimeGrid& grid, const LevyMeasure& levy, std::size_t n_paths,
                             std::uint64_t seed, const TimeFn* beta, const MarkFn* eta) {
  if (n_paths < 1) throw ConfigError("n_paths must be at least 1");
  if (eta) require_tilt_positive(grid, levy, *eta, "measure change");

  const std::size_t M = grid.steps();
  const std::size_t J = levy.size();
  const std::size_t N = n_paths;
  const double dt = grid.dt();

  PathEnsemble ens;
  ens.grid_ = grid;
  ens.levy_ = levy;
  ens.n_paths_ = N;
  ens.seed_ = seed;
  ens.tag_ = (beta || eta) ? MeasureTag::Q : MeasureTag::P;

  if (beta) {
    ens.drift_.resize(M);
    for (std::size_t i = 0; i < M; ++i) ens.drift_[i] = (*beta)(grid.time(i));
  }
  ens.intensity_.resize(M * J);
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < J; ++j) {
      const double tilt = eta ? 1.0 + (*eta)(grid.time(i), j) : 1.0;
      ens.intensity_[i * J + j] = tilt * levy.weight(j);
    }
  }

  ens.db_.assign(M * N, 0.0);
  ens.b_.assign((M + 1) * N, 0.0);
  ens.jumps_.assign(M * J * N, 0);
  ens.cum_.assign((M + 1) * J * N, 0);
  const double sdt = std::sqrt(dt);

#pragma omp parallel for schedule(static)
  for (long long nn = 0; nn < static_cast<long long>(N); ++nn) {
    const auto n = static_cast<std::size_t>(nn);
    CounterStream bm(seed, n, 0);
    std::normal_distribution<double> normal(0.0, 1.0);
    double b = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      const double inc = sdt * normal(bm) + ens.drift(i) * dt;
      ens.db_[i * N + n] = inc;
      b += inc;
      ens.b_[(i + 1) * N + n] = b;
    }
    for (std::size_t j = 0; j < J; ++j) {
      CounterStream js(seed, n, 1 + j);
      std::uint32_t total = 0;
      for (std::size_t i = 0; i < M; ++i) {
        std::poisson_distribution<std::uint32_t> pois(ens.intensity_[i * J + j] * dt);
        const std::uint32_t c = pois(js);
        ens.jumps_[(i * J + j) * N + n] = c;
        total += c;
        ens.cum_[((i + 1) * J + j) * N + n] = total;
      }
    }
  }
  return ens;
}

PathEnsemble simulate_ensemble(const TimeGrid& grid, const LevyMeasure& levy, std::size_t n_paths,
                               std::uint64_t seed) {
  return simulate_tilted(grid, levy, n_paths, seed, nullptr, nullptr);
}

GirsanovDensity girsanov_density(const PathEnsemble& ens, const TimeFn& beta, const MarkFn& eta) {
  if (ens.tag() != MeasureTag::P) {
    throw CapabilityError("girsanov_density expects a P-tagged ensemble");
  }
  const TimeGrid& grid = ens.grid();
  const LevyMeasure& levy = ens.levy();
  require_tilt_positive(grid, levy, eta, "girsanov_density");
  const std::size_t M = grid.steps();
  const std::size_t J = levy.size();
  const std::size_t N = ens.n_paths();
  const double dt = grid.dt();

  std::vector<double> b(M), drift(M);
  std::vector<double> log_tilt(M * J);
  for (std::size_t i = 0; i < M; ++i) {
    const double t = grid.time(i);
    b[i] = beta(t);
    double d = -0.5 * b[i] * b[i] * dt;
    for (std::size_t j = 0; j < J; ++j) {
      const double e = eta(t, j);
      log_tilt[i * J + j] = std::log1p(e);
      d -= e * levy.weight(j) * dt;
    }
    drift[i] = d;
  }

  GirsanovDensity out(N, M + 1);
#pragma omp parallel for schedule(static)
  for (long long nn = 0; nn < static_cast<long long>(N); ++nn) {
    const auto n = static_cast<std::size_t>(nn);
    double log_m = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      log_m += b[i] * ens.db(n, i) + drift[i];
      for (std::size_t j = 0; j < J; ++j) log_m += log_tilt[i * J + j] * ens.jumps(n, i, j);
      out.at(n, i + 1) = std::exp(log_m);
    }
  }
  return out;
}

PathEnsemble shift_to_q(const PathEnsemble& ens, const TimeFn& beta, const MarkFn& eta) {
  if (ens.tag() != MeasureTag::P) {
    throw CapabilityError("shift_to_q expects a P-tagged ensemble");
  }
  return simulate_tilted(ens.grid(), ens.levy(), ens.n_paths(), ens.seed(), &beta, &eta);
}

}  // namespace mfbsde
