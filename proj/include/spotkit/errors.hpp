#pragma once

#include <stdexcept>
#include <string>

namespace spotkit {

// Base class for every error raised by the library. The CLI maps
// UsageError and ConfigError to exit code 1 and everything else to 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ParameterError : Error {
  using Error::Error;
};

// Numeric degeneracy, e.g. normalizing a zero vector.
struct NumericError : Error {
  using Error::Error;
};

struct StateError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct LookupError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct UsageError : Error {
  using Error::Error;
};

}  // namespace spotkit
