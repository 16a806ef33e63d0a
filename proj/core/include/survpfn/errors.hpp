#pragma once

#include <stdexcept>
#include <string>

namespace survpfn {

/// Malformed or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input data violates a documented contract (CLI exit code 3).
class DataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite or otherwise unusable value (exit code 4).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Statistics were about to be fitted on held-out rows.
class LeakageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace survpfn
