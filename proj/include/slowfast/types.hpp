#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace slowfast {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// A model violates one of the standing assumptions (e.g. non-Hurwitz drift).
class AssumptionViolation : public Error {
public:
  using Error::Error;
};

/// An explicit time step is too coarse for the fast timescale.
class StabilityError : public Error {
public:
  using Error::Error;
};

/// A simulated path produced a non-finite state.
class Diverged : public Error {
public:
  using Error::Error;
};

/// A fixed-point iteration failed to contract or to converge.
class ConvergenceError : public Error {
public:
  using Error::Error;
};

/// Drift expression could not be parsed.
class ParseError : public Error {
public:
  ParseError(const std::string &what, std::size_t position)
      : Error(what + " at position " + std::to_string(position)),
        position_(position) {}

  [[nodiscard]] std::size_t position() const noexcept { return position_; }

private:
  std::size_t position_;
};

inline void require(bool condition, const std::string &message) {
  if (!condition) {
    throw InvalidArgument(message);
  }
}

[[nodiscard]] inline bool all_finite(const Vector &v) {
  return v.allFinite();
}

} // namespace slowfast
