#pragma once

#include <stdexcept>
#include <string>

namespace direx {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Alphabets or axes of two objects do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A numeric parameter lies outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A table or state failed its invariants (normalisation, positivity, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Caller broke a precondition that the type system cannot express.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Exhaustive enumeration requested beyond what fits in memory or time.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// A randomness bound was contradicted by a behaviour it should cover.
class BoundInvalid : public Error {
 public:
  using Error::Error;
};

/// Malformed text input.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  explicit ParseError(const std::string& what) : ParseError(what, 0) {}

  int line() const noexcept { return line_; }

 private:
  int line_ = 0;
};

}  // namespace direx
