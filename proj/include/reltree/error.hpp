#pragma once

#include <stdexcept>
#include <string>

namespace reltree {

/// Broad failure classes. Each maps onto a CLI exit code.
enum class ErrorKind {
  validation,  // malformed or inconsistent input data
  backend,     // an LLM backend or selector failed
  parse,       // structured output could not be parsed after repairs
  capability,  // backend lacks a feature the operation needs
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message)
      : Error(ErrorKind::validation, message) {}
};

class BackendError : public Error {
 public:
  explicit BackendError(const std::string& message)
      : Error(ErrorKind::backend, message) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::string raw_response = {})
      : Error(ErrorKind::parse, message), raw_response_(std::move(raw_response)) {}

  /// Last raw model output that failed to parse, if any.
  [[nodiscard]] const std::string& raw_response() const noexcept { return raw_response_; }

 private:
  std::string raw_response_;
};

class CapabilityError : public Error {
 public:
  explicit CapabilityError(const std::string& message)
      : Error(ErrorKind::capability, message) {}
};

/// Re-throws the active reltree::Error with `context` prepended, keeping its kind.
/// Must be called from inside a catch block.
[[noreturn]] inline void rethrow_with_context(const std::string& context) {
  try {
    throw;
  } catch (const ParseError& e) {
    throw ParseError(context + ": " + e.what(), e.raw_response());
  } catch (const BackendError& e) {
    throw BackendError(context + ": " + e.what());
  } catch (const CapabilityError& e) {
    throw CapabilityError(context + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(context + ": " + e.what());
  } catch (const Error& e) {
    throw Error(e.kind(), context + ": " + e.what());
  }
}

/// 0 success, 2 validation, 3 backend, 4 parse/repair exhaustion.
[[nodiscard]] constexpr int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::validation:
      return 2;
    case ErrorKind::backend:
    case ErrorKind::capability:
      return 3;
    case ErrorKind::parse:
      return 4;
  }
  return 1;
}

}  // namespace reltree
