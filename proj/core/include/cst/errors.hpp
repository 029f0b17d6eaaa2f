#pragma once

#include <stdexcept>
#include <string>

namespace cst {

/// Base for every error raised by the library. The CLI maps the concrete
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or malformed files, unsupported raster formats.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A value outside the documented domain of an operation.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent experiment configuration (bad keys, conflicting options).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Failure inside a structure-extraction backend.
class BackendError : public Error {
 public:
  using Error::Error;
};

/// Dataset content problems: missing masks, mismatched file sets.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during optimization (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

[[noreturn]] void throw_parameter(const std::string& what);

}  // namespace cst
