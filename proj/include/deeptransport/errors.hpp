#pragma once

#include <stdexcept>
#include <string>

namespace deeptransport {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed configuration or command-line arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data that violates a schema or invariant.
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced or consumed by a numerical routine.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace deeptransport
