#pragma once

#include <stdexcept>
#include <string>

namespace zp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An operation produced NaN/Inf, or hit a degenerate input (e.g. a zero-norm embedding).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed file (weights, tensor dumps, CIFAR batches).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or unknown key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace zp
