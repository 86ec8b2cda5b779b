#pragma once

#include <stdexcept>
#include <string>

namespace ppcn {

// Error taxonomy shared by every module. The CLI maps these onto exit codes:
// usage/config/parse -> 2, io/format -> 3, numerical -> 4.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or channel counts that do not chain.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Input values outside their domain (non-finite intensities, bad labels).
class InputError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class ParseError : public UsageError {
 public:
  using UsageError::UsageError;
};

class ConfigError : public UsageError {
 public:
  using UsageError::UsageError;
};

/// Operation called out of order, e.g. backward before forward.
class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public IoError {
 public:
  using IoError::IoError;
};

/// Non-finite loss or gradient encountered during optimization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace ppcn
