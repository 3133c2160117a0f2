#pragma once

#include <stdexcept>
#include <string>

namespace harmless {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad manifest, unreadable source file, corrupt store.
class IngestError : public Error {
 public:
  using Error::Error;
};

// Caller passed an argument outside an operation's contract.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Classifier or regression fit impossible on the given data.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in a session state that does not allow it.
class StateError : public Error {
 public:
  using Error::Error;
};

// No unlabeled documents left to sample.
class ExhaustedError : public StateError {
 public:
  using StateError::StateError;
};

// Invalid configuration; `field` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace harmless
