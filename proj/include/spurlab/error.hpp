#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spurlab {

/// Invalid configuration or precondition violation (bad sizes, negative variances, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operand shapes do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input file. `row()` is the 1-based line number, 0 if not row-specific.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t row)
      : std::runtime_error(row ? "row " + std::to_string(row) + ": " + what : what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// A numerical routine failed in a way that is not a property of the input
/// (e.g. the separator QP stalled).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace spurlab
