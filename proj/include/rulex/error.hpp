#pragma once

#include <stdexcept>
#include <string>

namespace rulex {

// Failure categories. These map one-to-one onto the C API status codes.
enum class ErrorKind {
  Dimension,   // shape mismatch between operands
  Index,       // out-of-range label, class or position
  Contract,    // violated precondition (e.g. backward on a non-scalar)
  Config,      // unknown key, type mismatch, malformed config file
  Io,          // filesystem or serialization failure
  Numeric,     // NaN / Inf in loss, gradients or parameters
  Network,     // endpoint unreachable, auth failure, malformed response
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace rulex
