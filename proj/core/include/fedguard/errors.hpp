#pragma once

#include <stdexcept>
#include <string>

namespace fedguard {

// Base of every error the library throws. The CLI maps subclasses onto
// process exit codes (see tools/fedguard.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or model description.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A configuration value outside its valid range; `key()` names the field.
class ValidationError : public ConfigError {
 public:
  ValidationError(std::string key, const std::string& message)
      : ConfigError(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Precondition on input values violated (empty batch, n < classes, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced inside a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed binary input (IDX files, parameter checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

// The federation protocol cannot continue, e.g. every client is banned.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedguard
