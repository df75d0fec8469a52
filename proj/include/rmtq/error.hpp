#pragma once

#include <stdexcept>
#include <string>

namespace rmtq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied inconsistent or out-of-range input (dimension mismatch,
/// non-finite entries, empty samples, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver stopped without meeting its tolerance.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double last_residual)
      : Error(what + " (last residual " + std::to_string(last_residual) + ")"),
        last_residual_(last_residual) {}

  double last_residual() const noexcept { return last_residual_; }

 private:
  double last_residual_;
};

/// ODE/SDE integration failure at a given time.
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, double location)
      : Error(what + " at t=" + std::to_string(location)), location_(location) {}

  double location() const noexcept { return location_; }

 private:
  double location_;
};

/// A deterministic quantity is too close to a pole (e.g. 1 - <M1 M2> ~ 0).
class SingularityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace rmtq
