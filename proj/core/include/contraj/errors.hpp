#pragma once

#include <stdexcept>
#include <string>

namespace contraj {

/// Violated precondition or shape contract of a public operation.
class ContractError : public std::invalid_argument {
 public:
  explicit ContractError(const std::string& what) : std::invalid_argument(what) {}
};

/// Input outside the mathematical domain of an operation (e.g. tangent
/// vectors with norm >= pi).
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// Malformed file content. Carries file and row context where available.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid data values (e.g. non-unit quaternions beyond tolerance).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite state encountered while integrating. Carries the step index.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

}  // namespace contraj
