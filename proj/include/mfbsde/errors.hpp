#pragma once

#include <stdexcept>
#include <string>

namespace mfbsde {

// Bad user input: grid sizes, malformed parameters, unsatisfiable settings.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A coefficient leaves its admissible range, e.g. 1 + eta <= 0.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The requested combination is outside what a routine can compute in closed form.
class CapabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mfbsde
