#pragma once

#include <stdexcept>
#include <string>

namespace tractcloud {

// Base of every error the library raises. The CLI maps the subclasses onto
// exit codes (config/usage 2, data validation 3, internal consistency 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// Recognized file, unsupported version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tractcloud
