#pragma once

#include <stdexcept>
#include <string>

namespace drr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN/Inf showed up, or training diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration: unknown keys, malformed values, mismatched topology.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Reversible execution was requested with a coefficient setting that is not invertible.
class ReversibilityError : public Error {
 public:
  using Error::Error;
};

/// A runtime invariant that should hold by construction was violated.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace drr
