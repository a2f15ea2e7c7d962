#pragma once

#include <stdexcept>
#include <string>

namespace stemlm {

// Broad failure categories. The C API and the CLI map these onto status and
// exit codes.
enum class ErrorKind {
  usage,      // bad argument, bad configuration, missing input file
  data,       // malformed input data, corrupt checkpoint, vocabulary mismatch
  numeric,    // shape mismatch, non-finite value
  invariant,  // internal consistency check failed
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::invariant: return "invariant";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace stemlm
