#pragma once

#include <stdexcept>
#include <string>

namespace gpmax {

/// Error categories shared by the C++ core and the C API status codes.
enum class ErrorCode {
  kInvalidArgument = 1,
  kDomain = 2,        // input outside the region where an operation is defined
  kNumerical = 3,     // ill-conditioning, non-convergence, degenerate laws
  kUnsupported = 4,   // e.g. derivative order not registered
  kIo = 5,
  kConfig = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace gpmax
