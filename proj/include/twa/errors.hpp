#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace twa {

/// Base for every error raised by the library. The CLI maps subclasses to
/// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Emitter positions could not be made pairwise distinct.
class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

/// Dipole kernel evaluated at zero separation.
class SingularKernel : public Error {
 public:
  using Error::Error;
};

/// Dissipation matrix has an eigenvalue below the clamp tolerance.
class KernelInconsistency : public Error {
 public:
  using Error::Error;
};

/// A trajectory produced a non-finite drift or state.
class NumericalBlowup : public Error {
 public:
  NumericalBlowup(std::uint64_t trajectory, std::uint64_t step, const std::string& what)
      : Error("numerical blowup in trajectory " + std::to_string(trajectory) + " at step " +
              std::to_string(step) + ": " + what),
        trajectory_(trajectory),
        step_(step) {}

  std::uint64_t trajectory() const noexcept { return trajectory_; }
  std::uint64_t step() const noexcept { return step_; }

 private:
  std::uint64_t trajectory_;
  std::uint64_t step_;
};

/// Too many trajectories of an ensemble blew up.
class EnsembleBlowup : public Error {
 public:
  EnsembleBlowup(std::uint64_t failed, std::uint64_t total)
      : Error(std::to_string(failed) + " of " + std::to_string(total) +
              " trajectories blew up (limit 1%)"),
        failed_(failed),
        total_(total) {}

  std::uint64_t failed() const noexcept { return failed_; }
  std::uint64_t total() const noexcept { return total_; }

 private:
  std::uint64_t failed_;
  std::uint64_t total_;
};

/// Exact integrator lost probability, hermiticity or positivity.
class IntegratorFailure : public Error {
 public:
  using Error::Error;
};

/// Mean collective spin too small to define a squeezing direction.
class UndefinedDirection : public Error {
 public:
  using Error::Error;
};

/// Scenario does not admit the requested operation (e.g. no exact oracle).
class Unsupported : public Error {
 public:
  using Error::Error;
};

/// Scenario file could not be parsed or validated.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace twa
