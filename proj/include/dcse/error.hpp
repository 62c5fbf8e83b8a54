#pragma once

#include <stdexcept>
#include <string>

namespace dcse {

// Root of all library errors. The CLI maps the three families below onto
// exit codes: UsageError -> 1, DataError -> 2, NumericalError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad parameters or configuration supplied by the caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Unreadable or malformed input data, or data too small for the request.
class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Incompatible operand shapes; the message names both shapes.
class ShapeError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Zero-norm vectors, empty pools, constant inputs to a correlation.
class DegenerateError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace dcse
