#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rosetta {

enum class ErrorKind {
  Shape,
  InvalidArgument,
  OutOfRange,
  NotFound,
  Duplicate,
  Fingerprint,
  BadMagic,
  BadVersion,
  Checksum,
  Io,
  Config,
  NonFinite,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::OutOfRange: return "out_of_range";
    case ErrorKind::NotFound: return "not_found";
    case ErrorKind::Duplicate: return "duplicate";
    case ErrorKind::Fingerprint: return "fingerprint";
    case ErrorKind::BadMagic: return "bad_magic";
    case ErrorKind::BadVersion: return "bad_version";
    case ErrorKind::Checksum: return "checksum";
    case ErrorKind::Io: return "io";
    case ErrorKind::Config: return "config";
    case ErrorKind::NonFinite: return "non_finite";
  }
  return "unknown";
}

// Every failure in the library surfaces as an Error carrying a kind so callers
// (and the CLI) can branch on it without string matching.
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

}  // namespace rosetta
