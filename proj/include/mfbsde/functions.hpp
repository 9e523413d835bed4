#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace mfbsde {

// Deterministic coefficient of time.
using TimeFn = std::function<double(double)>;
// Deterministic coefficient of (time, atom index).
using MarkFn = std::function<double(double, std::size_t)>;
// Scalar map R -> R, used for smooth terminal factors.
using ScalarFn = std::function<double(double)>;

TimeFn constant_fn(double c);
TimeFn zero_fn();
// a + b t
TimeFn linear_fn(double a, double b);

MarkFn constant_mark(double c);
MarkFn zero_mark();
// One value per atom, constant in time.
MarkFn per_atom_mark(std::vector<double> values);
// c * zeta_j for the given atom marks.
MarkFn proportional_mark(double c, std::vector<double> marks);

}  // namespace mfbsde
