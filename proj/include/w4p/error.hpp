#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace w4p {

enum class ErrorKind {
  InvalidArgument,
  Parse,
  NotFound,
  Conflict,
  FingerprintMismatch,
  Numeric,
  Io,
  Empty,
  Config,
};

std::string_view to_string(ErrorKind kind);

// Every failure the library reports goes through this type; callers (CLI,
// HTTP service) map the kind to an exit code or status.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace w4p
