#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ttc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Arguments violate an operation's precondition.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Batch statistics are undefined for the requested batch (N = 1 with
/// per-batch normalization).
class DegenerateBatch : public Error {
 public:
  using Error::Error;
};

/// Malformed serialized document. `offset()` is the byte position the
/// parser stopped at.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Well-formed document whose shape or content disagrees with expectations.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Source training produced a non-finite loss.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace ttc
