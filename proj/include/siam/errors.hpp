#pragma once

#include <stdexcept>
#include <string>

namespace siam {

/// Shape or extent violation in a tensor op or model stage.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inconsistent or incomplete configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or other numeric breakdown (NaN gradients, diverged loss).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of the autodiff tape (consumed tape, untracked loss, mixed tapes).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class ParseErrorKind {
  BadMagic,
  UnsupportedVersion,
  UnsupportedDtype,
  Truncated,
  BadExtents,
  TrailingBytes,
  NonFinite,
  Io,
};

const char* to_string(ParseErrorKind kind);

/// Structured failure from one of the binary readers (IDX, SVT, checkpoint).
class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ParseErrorKind kind() const noexcept { return kind_; }

 private:
  ParseErrorKind kind_;
};

}  // namespace siam
