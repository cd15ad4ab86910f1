#pragma once

#include <stdexcept>
#include <string>

namespace defrom {

// Base class for every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller violated a documented precondition (bad size, zero vector, ...).
class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

// Mismatched dimensions between objects that must agree.
class DimensionError : public InvalidArgumentError {
 public:
  using InvalidArgumentError::InvalidArgumentError;
};

// A matrix that must be symmetric positive definite failed to factor.
class FactorizationError : public Error {
 public:
  using Error::Error;
};

// A linear system is singular, typically because a basis is dependent.
class SingularSystemError : public Error {
 public:
  using Error::Error;
};

// The right-hand side family is identically zero where data is required.
class ZeroDataError : public Error {
 public:
  using Error::Error;
};

// A certified coercivity bound was violated or could not be established.
class CoercivityError : public Error {
 public:
  using Error::Error;
};

// File or directory input/output failure, including malformed content.
class IoError : public Error {
 public:
  using Error::Error;
};

// Invalid or contradictory run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace defrom
