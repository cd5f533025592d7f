#pragma once

#include <stdexcept>
#include <string>

namespace simhum {

// Base class for every error raised by the library. The CLI maps UserError
// subclasses to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UserError : public Error {
 public:
  using Error::Error;
};

// Bad argument value passed to a function (alpha outside [0,1], t out of range).
class ArgumentError : public UserError {
 public:
  using UserError::UserError;
};

// Inconsistent configuration (dims, empty pools, unknown catalog ids).
class ConfigError : public UserError {
 public:
  using UserError::UserError;
};

// Filesystem problems and missing artifacts.
class IoError : public UserError {
 public:
  using UserError::UserError;
};

// Corrupt or tampered files, version mismatches.
class FormatError : public UserError {
 public:
  using UserError::UserError;
};

// Data that violates a documented invariant (episode lengths, dims).
class InvariantError : public UserError {
 public:
  using UserError::UserError;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class StepError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class RoutingError : public Error {
 public:
  using Error::Error;
};

class StructuralError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class PipelineError : public Error {
 public:
  using Error::Error;
};

}  // namespace simhum
