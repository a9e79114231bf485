#pragma once

#include <stdexcept>
#include <string>

namespace cqte {

// Bad input data or configuration supplied by the caller.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Design matrix is (numerically) rank deficient.
class SingularDesignError : public std::runtime_error {
 public:
  explicit SingularDesignError(const std::string& what) : std::runtime_error(what) {}
};

// Solver failed to reach its tolerance within the iteration cap.
class ConvergenceError : public std::runtime_error {
 public:
  explicit ConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cqte
