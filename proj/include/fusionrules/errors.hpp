#pragma once

#include <stdexcept>
#include <string>

namespace fusionrules {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data: malformed files, misaligned volumes, out-of-range values.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Volumes that do not share a grid. The message names the volume and axis.
class AlignmentError : public DataError {
 public:
  using DataError::DataError;
};

/// Singular systems, diverging optimisation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace fusionrules
