#pragma once

#include <stdexcept>
#include <string>

namespace dmcee {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (files, matrices, indices).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or an impossible request.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Shapes of operands do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure cannot proceed (rank deficiency, degenerate input).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite or exploding loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace dmcee
