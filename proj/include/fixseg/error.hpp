#pragma once

#include <stdexcept>
#include <string>

namespace fixseg {

/// Base of every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Data and ingestion errors.
class DataError : public Error {
 public:
  using Error::Error;
};
class MissingBandError : public DataError {
 public:
  using DataError::DataError;
};
class ShapeMismatchError : public DataError {
 public:
  using DataError::DataError;
};
class UnknownClassError : public DataError {
 public:
  using DataError::DataError;
};
class EmptyDatasetError : public DataError {
 public:
  using DataError::DataError;
};

/// Raised by the labeled/unlabeled split search when no image subset satisfies the per-class band.
class InfeasibleSplitError : public Error {
 public:
  using Error::Error;
};

// Losses and metrics.
class NoLabeledPixelError : public Error {
 public:
  using Error::Error;
};
class EmptyMatrixError : public Error {
 public:
  using Error::Error;
};
class AllUndefinedError : public Error {
 public:
  using Error::Error;
};
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Model and training.
class ShapeError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class NoCheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace fixseg
