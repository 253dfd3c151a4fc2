#pragma once

#include <stdexcept>
#include <string>

namespace tempagg {

// Base for every error raised by the library. The CLI maps subclasses to
// process exit codes (config 2, data 3, numeric 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes, axes or widths that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN / non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Argument outside its documented domain (probability, label, k, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// A requested temporal scope has no frames to read from.
class DataCoverageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk input. Subclasses identify the failure precisely.
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ShapeMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Well-formed input whose content violates an invariant (start >= stop,
// class index out of vocabulary, ...). Carries the 1-based line when known.
class ValidationError : public FormatError {
 public:
  ValidationError(const std::string& what, std::size_t line = 0)
      : FormatError(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace tempagg
