#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gsg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or vector shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Log map between antipodal points, or any other coordinate singularity.
class SingularityError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Floating point breakdown: NaN gradients, inverse-trig arguments far out of range.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Raised by the finite-difference harness when the checked function is not deterministic.
class CheckInvalidError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input. Carries the offending token (geometry strings) or line number (dataset files).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::string token, std::size_t line = 0)
      : Error(what), token_(std::move(token)), line_(line) {}

  const std::string& token() const noexcept { return token_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string token_;
  std::size_t line_;
};

using WarningHandler = std::function<void(std::string_view)>;

namespace detail {
inline WarningHandler& warning_handler_slot() {
  static WarningHandler handler = [](std::string_view msg) { std::cerr << "warning: " << msg << '\n'; };
  return handler;
}
inline std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Replaces the process-wide warning sink and returns the previous one.
inline WarningHandler set_warning_handler(WarningHandler handler) {
  std::lock_guard lock(detail::warning_mutex());
  auto previous = std::move(detail::warning_handler_slot());
  detail::warning_handler_slot() = std::move(handler);
  return previous;
}

inline void warn(std::string_view message) {
  std::lock_guard lock(detail::warning_mutex());
  if (detail::warning_handler_slot()) detail::warning_handler_slot()(message);
}

}  // namespace gsg
