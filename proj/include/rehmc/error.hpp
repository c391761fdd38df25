#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace rehmc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or argument (maps to CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data could not be parsed or violates a model precondition.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A density was evaluated outside its support or produced a non-finite value.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during sampling (maps to CLI exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Non-finite density or gradient reached by the integrator.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, Eigen::VectorXd theta, int step = -1)
      : NumericalError(what), theta_(std::move(theta)), step_(step) {}

  const Eigen::VectorXd& theta() const { return theta_; }
  /// 1-based leapfrog step index within a trajectory, or -1 for a single step.
  int step() const { return step_; }

 private:
  Eigen::VectorXd theta_;
  int step_;
};

}  // namespace rehmc
