#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "mfbsde/functions.hpp"

namespace mfbsde {

class TimeGrid {
 public:
  TimeGrid() = default;

  double horizon() const { return horizon_; }
  std::size_t steps() const { return steps_; }
  std::size_t nodes() const { return steps_ + 1; }
  double dt() const { return dt_; }
  // i * dt, except that the last node is the horizon itself.
  double time(std::size_t i) const { return i == steps_ ? horizon_ : static_cast<double>(i) * dt_; }
  std::vector<double> times() const;

 private:
  friend TimeGrid build_grid(double horizon, long long steps);
  double horizon_ = 1.0;
  std::size_t steps_ = 1;
  double dt_ = 1.0;
};

TimeGrid build_grid(double horizon, long long steps);

struct Atom {
  double mark;
  double weight;
};

// Finite-activity Levy measure: nu = sum_j w_j delta_{zeta_j}.
class LevyMeasure {
 public:
  LevyMeasure() = default;
  explicit LevyMeasure(std::vector<Atom> atoms);

  std::size_t size() const { return atoms_.size(); }
  bool empty() const { return atoms_.empty(); }
  double mark(std::size_t j) const { return atoms_[j].mark; }
  double weight(std::size_t j) const { return atoms_[j].weight; }
  double total_mass() const;
  const std::vector<Atom>& atoms() const { return atoms_; }
  std::vector<double> marks() const;
  std::vector<double> weights() const;

 private:
  std::vector<Atom> atoms_;
};

// Stateless-keyed random stream usable with <random> distributions.
// Each (seed, path, source) triple owns an independent sequence, so the
// ensemble does not depend on how paths are scheduled across threads.
class CounterStream {
 public:
  using result_type = std::uint64_t;
  CounterStream(std::uint64_t seed, std::uint64_t path, std::uint64_t source);
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

enum class MeasureTag { P, Q };

// Node-major storage: entry (path n, step i) lives at i * n_paths + n.
class PathEnsemble {
 public:
  std::size_t n_paths() const { return n_paths_; }
  const TimeGrid& grid() const { return grid_; }
  const LevyMeasure& levy() const { return levy_; }
  std::uint64_t seed() const { return seed_; }
  MeasureTag tag() const { return tag_; }
  std::size_t atoms() const { return levy_.size(); }

  // Raw increment B(t_{i+1}) - B(t_i) of the canonical process.
  double db(std::size_t n, std::size_t i) const { return db_[i * n_paths_ + n]; }
  // Raw B(t_i), i = 0..M.
  double brownian(std::size_t n, std::size_t i) const { return b_[i * n_paths_ + n]; }
  std::uint32_t jumps(std::size_t n, std::size_t i, std::size_t j) const {
    return jumps_[(i * atoms() + j) * n_paths_ + n];
  }
  std::uint32_t cumulative_jumps(std::size_t n, std::size_t i, std::size_t j) const {
    return cum_[(i * atoms() + j) * n_paths_ + n];
  }

  // Drift of the canonical Brownian path under the tagged measure on step i.
  double drift(std::size_t i) const { return drift_.empty() ? 0.0 : drift_[i]; }
  // Jump intensity of atom j on step i under the tagged measure.
  double intensity(std::size_t i, std::size_t j) const { return intensity_[i * atoms() + j]; }

  // Martingale increments under the tagged measure; these drive Z and K.
  double dw(std::size_t n, std::size_t i) const { return db(n, i) - drift(i) * grid_.dt(); }
  double compensated(std::size_t n, std::size_t i, std::size_t j) const {
    return static_cast<double>(jumps(n, i, j)) - intensity(i, j) * grid_.dt();
  }
  // Increments of the P-compensated measure. Terminal conditions are fixed
  // random variables, so they are always evaluated with these.
  double compensated_p(std::size_t n, std::size_t i, std::size_t j) const {
    return static_cast<double>(jumps(n, i, j)) - levy_.weight(j) * grid_.dt();
  }
  double compensated_sum_p(std::size_t n, std::size_t i, std::size_t j) const {
    return static_cast<double>(cumulative_jumps(n, i, j)) - levy_.weight(j) * grid_.time(i);
  }

 private:
  friend PathEnsemble simulate_tilted(const TimeGrid&, const LevyMeasure&, std::size_t, std::uint64_t,
                                      const TimeFn*, const MarkFn*);
  TimeGrid grid_;
  LevyMeasure levy_;
  std::size_t n_paths_ = 0;
  std::uint64_t seed_ = 0;
  MeasureTag tag_ = MeasureTag::P;
  std::vector<double> db_;
  std::vector<double> b_;
  std::vector<std::uint32_t> jumps_;
  std::vector<std::uint32_t> cum_;
  std::vector<double> drift_;
  std::vector<double> intensity_;
};

PathEnsemble simulate_ensemble(const TimeGrid& grid, const LevyMeasure& levy, std::size_t n_paths,
                               std::uint64_t seed);

// Same random streams as simulate_ensemble, but Brownian increments carry drift
// beta(t_i) dt and atom j fires with intensity (1 + eta(t_i, j)) w_j.
// A null pointer means "no tilt" for that component.
PathEnsemble simulate_tilted(const TimeGrid& grid, const LevyMeasure& levy, std::size_t n_paths,
                             std::uint64_t seed, const TimeFn* beta, const MarkFn* eta);

class GirsanovDensity {
 public:
  GirsanovDensity(std::size_t n_paths, std::size_t nodes) : n_paths_(n_paths), m_(n_paths * nodes, 1.0) {}
  double operator()(std::size_t n, std::size_t i) const { return m_[i * n_paths_ + n]; }
  double& at(std::size_t n, std::size_t i) { return m_[i * n_paths_ + n]; }
  std::size_t n_paths() const { return n_paths_; }

 private:
  std::size_t n_paths_;
  std::vector<double> m_;
};

// Exponential formula for dQ/dP restricted to F_{t_i}; requires a P-tagged ensemble.
GirsanovDensity girsanov_density(const PathEnsemble& ens, const TimeFn& beta, const MarkFn& eta);

// Regenerates the ensemble from its seed with the Q-law of the noise.
PathEnsemble shift_to_q(const PathEnsemble& ens, const TimeFn& beta, const MarkFn& eta);

// Throws DomainError naming (t, zeta) if 1 + eta(t_i, zeta_j) <= 0 at some node.
void require_tilt_positive(const TimeGrid& grid, const LevyMeasure& levy, const MarkFn& eta,
                           const char* what);

}  // namespace mfbsde
