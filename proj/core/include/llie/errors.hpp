#pragma once

#include <stdexcept>
#include <string>

namespace llie {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration, bad preset, bad CLI input. Maps to exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor or image dimensions that do not fit together. Maps to exit code 1.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Unreadable, malformed or missing input data. Maps to exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN / Inf encountered during training. Maps to exit code 3.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace llie
