#pragma once

#include <stdexcept>
#include <string>

namespace corect {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument, violated precondition or inconsistent configuration.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Construction request that does not fit the model (too many facts, heads, rows).
class CapacityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Numerical failure: singular system, search that found no solution.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Weights file with bad magic bytes, unknown version or bad header.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

/// Weights file whose tensor shapes disagree with its config.
class ShapeError : public IoError {
 public:
  using IoError::IoError;
};

/// Weights file that ends before all declared tensors were read.
class TruncationError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace corect
