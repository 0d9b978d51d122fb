#pragma once

#include <stdexcept>
#include <string>

namespace shapkit {

// Caller passed arguments that violate an operation's preconditions
// (shape mismatch, index out of range, malformed file). CLI exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A value outside the mathematical domain of an operation (NaN input,
// empty softmax support, empty average).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Linear-algebra failure such as a singular system.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The request is valid but beyond what the implementation supports
// (e.g. exact enumeration for too many players).
class CapabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Optimization produced a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace shapkit
