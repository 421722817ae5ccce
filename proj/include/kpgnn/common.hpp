#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace kpgnn {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input records, timestamps, or files.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity produced by a numerical primitive.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or precondition violations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace kpgnn
