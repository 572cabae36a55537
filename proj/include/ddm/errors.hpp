#pragma once

#include <stdexcept>
#include <string>

namespace ddm {

/// Bad input: shapes, parameter ranges, budgets, malformed configs.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numeric procedure failed to reach its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ValidationError(what);
}

}  // namespace ddm
