#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace multiwave {

/// Base class for every failure raised by the library. `module()` names the
/// component that failed so front ends can report it.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(module + ": " + what), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

/// Bad input: missing columns, infeasible budgets, malformed configuration.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: non-convergence, singular systems, infeasible calibration.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace multiwave
