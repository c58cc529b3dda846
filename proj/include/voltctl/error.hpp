#pragma once

#include <stdexcept>
#include <string>

namespace voltctl {

/// Malformed input text. Carries the 1-based line where parsing stopped.
class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// Input that parses but violates a model invariant (dangling bus, no slack, ...).
class SemanticError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Requested topology edit is invalid (missing branch, islanding).
class TopologyError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Linear algebra failure: singular reduced matrix, singular Jacobian.
class SingularError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class DimensionError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Simulation could not continue (plant divergence, step-size underflow).
class SimulationError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class InfeasibleError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace voltctl
