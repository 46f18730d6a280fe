#pragma once

#include <stdexcept>
#include <string>

namespace dts {

/// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or map sizes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN / Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data (dataset files, checkpoints, CSV logs).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace dts
