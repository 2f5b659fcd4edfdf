#pragma once

#include <stdexcept>
#include <string>

namespace bsg {

// Structural problems with an input (shape mismatch, bad dimension, bad value).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// File cannot be read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure of a numerical solve at a specific grid time.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, std::string equation, double time)
      : std::runtime_error(what + " [" + equation + " at t=" + std::to_string(time) + "]"),
        equation_(std::move(equation)),
        time_(time) {}

  const std::string& equation() const { return equation_; }
  double time() const { return time_; }

 private:
  std::string equation_;
  double time_;
};

class DivergenceError : public SolverError {
 public:
  DivergenceError(std::string equation, double time)
      : SolverError("divergence", std::move(equation), time) {}
};

class SingularityError : public SolverError {
 public:
  SingularityError(const std::string& factor, std::string equation, double time)
      : SolverError("near-singular " + factor, std::move(equation), time) {}
};

// Solvability condition (positive block determinant) violated.
class UnsolvableError : public SolverError {
 public:
  UnsolvableError(std::string equation, double min_det, double time)
      : SolverError("solvability condition fails, min det " + std::to_string(min_det),
                    std::move(equation), time),
        min_determinant_(min_det) {}

  double min_determinant() const { return min_determinant_; }

 private:
  double min_determinant_;
};

// Quadratic program with an indefinite Hessian.
class NonConvexError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bsg
