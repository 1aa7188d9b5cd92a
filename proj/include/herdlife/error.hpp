#pragma once

#include <stdexcept>
#include <string>

namespace herdlife {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not agree with what an operation needs.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A forward value became NaN or infinite, or an input violated a numeric precondition.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (files, tables, histories).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration supplied by a caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint file is truncated, corrupt, or has an unsupported version.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace herdlife
