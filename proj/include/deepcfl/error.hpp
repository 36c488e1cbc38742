#pragma once

#include <stdexcept>
#include <string>

namespace deepcfl {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent run configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Mismatched or unsupported tensor / image dimensions.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// A loss or activation became NaN/Inf.
class NumericError : public Error {
public:
  using Error::Error;
};

/// File could not be read, written or parsed.
class IoError : public Error {
public:
  using Error::Error;
};

/// Serialized state with an unexpected magic, version or layout.
class FormatError : public IoError {
public:
  using IoError::IoError;
};

}  // namespace deepcfl
