#pragma once

#include <stdexcept>
#include <string>

namespace dtl {

// Error categories; mirrored one-to-one by the dtl_status codes of the C API.
enum class ErrorCode {
  argument = 1,
  schema,
  manifest,
  split_integrity,
  state,
  resolution,
  divergence,
  undefined_metric,
  spec,
  report,
  io,
  unknown,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool cond, ErrorCode code, const std::string& message) {
  if (!cond) raise(code, message);
}

}  // namespace dtl
