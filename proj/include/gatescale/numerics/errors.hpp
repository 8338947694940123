#pragma once

#include <stdexcept>
#include <string>

namespace gatescale {

// Error taxonomy shared by all modules. Each maps to one failure class named
// in the operation contracts; the CLI turns them into exit codes.

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A precondition of an operation was violated by the caller.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// NaN/Inf, non-convergence, or an indefinite matrix.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CalibrationShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// ask/tell called out of order or with a mismatched reward count.
struct ProtocolError : std::logic_error {
  using std::logic_error::logic_error;
};

struct EvaluationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
  TrainingError(const std::string& what, long step) : std::runtime_error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace gatescale
