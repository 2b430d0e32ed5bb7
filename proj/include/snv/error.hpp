#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace snv {

enum class ErrorKind {
  invalid_argument,  // a value violates a documented precondition
  dataset,           // malformed or inconsistent input file
  fit,               // optimizer failed or hit a bound
  calibration,       // field calibration could not be determined
  io,
};

[[nodiscard]] constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::dataset: return "dataset";
    case ErrorKind::fit: return "fit";
    case ErrorKind::calibration: return "calibration";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, const std::string& message,
                    ErrorKind kind = ErrorKind::invalid_argument) {
  if (!condition) throw Error(kind, message);
}

}  // namespace snv
