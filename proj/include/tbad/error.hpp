#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tbad {

enum class ErrorCode {
  not_found,
  unsupported_format,
  alignment,
  corrupt_label,
  io,
  invalid_intensity,
  kind_mismatch,
  empty_foreground,
  patch_too_large,
  infeasible_split,
  shape,
  contract,
  degenerate_target,
  diverged_training,
  spec,
  config,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so that
/// callers (and the CLI exit-status mapping) can branch on the category.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace tbad
