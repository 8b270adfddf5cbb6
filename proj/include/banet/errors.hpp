#pragma once

#include <stdexcept>
#include <string>

namespace banet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad shapes, bad arguments, misuse of the tape.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Unknown config keys, unparsable values, bad command lines.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed files, missing image/mask pairs, empty datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace banet
