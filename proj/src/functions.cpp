#include "mfbsde/functions.hpp"

#include "mfbsde/errors.hpp"

namespace mfbsde {

TimeFn constant_fn(double c) {
  return [c](double) { return c; };
}

TimeFn zero_fn() { return constant_fn(0.0); }

TimeFn linear_fn(double a, double b) {
  return [a, b](double t) { return a + b * t; };
}

MarkFn constant_mark(double c) {
  return [c](double, std::size_t) { return c; };
}

MarkFn zero_mark() { return constant_mark(0.0); }

MarkFn per_atom_mark(std::vector<double> values) {
  return [values = std::move(values)](double, std::size_t j) {
    if (j >= values.size()) {
      throw ConfigError("per-atom coefficient has " + std::to_string(values.size()) +
                        " entries but atom " + std::to_string(j) + " was requested");
    }
    return values[j];
  };
}

MarkFn proportional_mark(double c, std::vector<double> marks) {
  return [c, marks = std::move(marks)](double, std::size_t j) { return c * marks.at(j); };
}

}  // namespace mfbsde
