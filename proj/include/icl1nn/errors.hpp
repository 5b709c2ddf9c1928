#pragma once

#include <stdexcept>
#include <string>

namespace icl1nn {

/// Dimension or size argument outside the supported range (d < 2, N < 1, ...).
struct InvalidDimension : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Real argument outside the mathematical domain of a function.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Logits or losses became non-finite.
struct NumericOverflow : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Input data violates a documented precondition (e.g. non-unit vectors).
struct PreconditionViolation : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed configuration, checkpoint, or dataset file.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace icl1nn
