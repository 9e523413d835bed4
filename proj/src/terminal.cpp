#include <cmath>
#include <type_traits>

#include "mfbsde/core.hpp"
#include "mfbsde/errors.hpp"

namespace mfbsde {

namespace {

double jump_linear_sum(const MarkFn& psi, const PathEnsemble& ens, std::size_t n) {
  const TimeGrid& g = ens.grid();
  double s = 0.0;
  for (std::size_t i = 0; i < g.steps(); ++i) {
    const double t = g.time(i);
    for (std::size_t j = 0; j < ens.atoms(); ++j) s += psi(t, j) * ens.compensated_p(n, i, j);
  }
  return s;
}

double factor_value(const WealthLinearTerminal& w, const PathEnsemble& ens, std::size_t n) {
  if (const auto* c = std::get_if<ConstantTerminal>(&w.factor)) return c->value;
  const auto& s = std::get<SmoothOfBrownianTerminal>(w.factor);
  return s.phi(ens.brownian(n, ens.grid().steps()));
}

double factor_derivative(const WealthLinearTerminal& w, const PathEnsemble& ens, std::size_t n) {
  if (std::holds_alternative<ConstantTerminal>(w.factor)) return 0.0;
  const auto& s = std::get<SmoothOfBrownianTerminal>(w.factor);
  return s.dphi(ens.brownian(n, ens.grid().steps()));
}

double wealth_at(const WealthLinearTerminal& w, const PathEnsemble& ens, std::size_t n) {
  if (!w.terminal_wealth || w.terminal_wealth->size() != ens.n_paths()) {
    throw ConfigError("wealth-linear terminal needs one terminal wealth value per path");
  }
  return (*w.terminal_wealth)[n];
}

void check_time(double t, const PathEnsemble& ens) {
  if (t < 0.0 || t > ens.grid().horizon()) throw DomainError("Malliavin derivative requested outside [0, T]");
}

}  // namespace

std::string TerminalCondition::name() const {
  return std::visit(
      [](const auto& k) -> std::string {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, ConstantTerminal>) return "constant";
        if constexpr (std::is_same_v<K, BrownianLinearTerminal>) return "brownian_linear";
        if constexpr (std::is_same_v<K, JumpLinearTerminal>) return "jump_linear";
        if constexpr (std::is_same_v<K, SmoothOfBrownianTerminal>) return "smooth_of_brownian";
        if constexpr (std::is_same_v<K, SmoothOfJumpTerminal>) return "smooth_of_jump";
        if constexpr (std::is_same_v<K, WealthLinearTerminal>) return "wealth_linear";
      },
      kind_);
}

double terminal_value(const TerminalCondition& tc, const PathEnsemble& ens, std::size_t n) {
  const std::size_t M = ens.grid().steps();
  return std::visit(
      [&](const auto& k) -> double {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, ConstantTerminal>) {
          return k.value;
        } else if constexpr (std::is_same_v<K, BrownianLinearTerminal>) {
          return k.a * ens.brownian(n, M) + k.b;
        } else if constexpr (std::is_same_v<K, JumpLinearTerminal>) {
          return jump_linear_sum(k.psi, ens, n);
        } else if constexpr (std::is_same_v<K, SmoothOfBrownianTerminal>) {
          return k.phi(ens.brownian(n, M));
        } else if constexpr (std::is_same_v<K, SmoothOfJumpTerminal>) {
          return k.phi(jump_linear_sum(k.psi, ens, n));
        } else {
          return factor_value(k, ens, n) * wealth_at(k, ens, n);
        }
      },
      tc.kind());
}

std::vector<double> terminal_values(const TerminalCondition& tc, const PathEnsemble& ens) {
  std::vector<double> out(ens.n_paths());
#pragma omp parallel for schedule(static)
  for (long long n = 0; n < static_cast<long long>(out.size()); ++n) {
    out[static_cast<std::size_t>(n)] = terminal_value(tc, ens, static_cast<std::size_t>(n));
  }
  return out;
}

double malliavin_b(const TerminalCondition& tc, double t, const PathEnsemble& ens, std::size_t n) {
  check_time(t, ens);
  const std::size_t M = ens.grid().steps();
  return std::visit(
      [&](const auto& k) -> double {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, ConstantTerminal>) {
          return 0.0;
        } else if constexpr (std::is_same_v<K, BrownianLinearTerminal>) {
          return k.a;
        } else if constexpr (std::is_same_v<K, JumpLinearTerminal> || std::is_same_v<K, SmoothOfJumpTerminal>) {
          return 0.0;
        } else if constexpr (std::is_same_v<K, SmoothOfBrownianTerminal>) {
          if (!k.dphi) throw CapabilityError("smooth terminal factor has no derivative attached");
          return k.dphi(ens.brownian(n, M));
        } else {
          // D_t X(T) = sigma0(t) X(T) for geometric wealth
          const double x = wealth_at(k, ens, n);
          return (factor_derivative(k, ens, n) + factor_value(k, ens, n) * k.sigma0(t)) * x;
        }
      },
      tc.kind());
}

double malliavin_n(const TerminalCondition& tc, double t, std::size_t atom, const PathEnsemble& ens,
                   std::size_t n) {
  check_time(t, ens);
  if (atom >= ens.atoms()) throw ConfigError("atom index out of range in malliavin_n");
  return std::visit(
      [&](const auto& k) -> double {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, JumpLinearTerminal>) {
          return k.psi(t, atom);
        } else if constexpr (std::is_same_v<K, SmoothOfJumpTerminal>) {
          const double g = jump_linear_sum(k.psi, ens, n);
          return k.phi(g + k.psi(t, atom)) - k.phi(g);
        } else if constexpr (std::is_same_v<K, WealthLinearTerminal>) {
          // X(T) jumps by the factor 1 + gamma0; theta has no jump exposure
          return factor_value(k, ens, n) * wealth_at(k, ens, n) * k.gamma0(t, atom);
        } else {
          return 0.0;
        }
      },
      tc.kind());
}

}  // namespace mfbsde

namespace mfbsde {

MalliavinEvaluator::MalliavinEvaluator(const TerminalCondition& tc, const PathEnsemble& ens)
    : tc_(&tc), ens_(&ens), values_(terminal_values(tc, ens)) {
  if (const auto* s = std::get_if<SmoothOfJumpTerminal>(&tc.kind())) {
    jump_sum_.resize(ens.n_paths());
    for (std::size_t n = 0; n < ens.n_paths(); ++n) jump_sum_[n] = jump_linear_sum(s->psi, ens, n);
  }
}

double MalliavinEvaluator::b(double t, std::size_t path) const { return malliavin_b(*tc_, t, *ens_, path); }

double MalliavinEvaluator::n(double t, std::size_t atom, std::size_t path) const {
  if (const auto* s = std::get_if<SmoothOfJumpTerminal>(&tc_->kind())) {
    const double g = jump_sum_[path];
    return s->phi(g + s->psi(t, atom)) - s->phi(g);
  }
  return malliavin_n(*tc_, t, atom, *ens_, path);
}

}  // namespace mfbsde
