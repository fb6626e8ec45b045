#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hvsobs {

enum class ErrorCode {
  invalid_argument,
  length_mismatch,
  non_finite,
  out_of_range,
  symmetry_violation,
  singular,
  io,
  not_found,
  conflict,
  out_of_order,
  validation,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this type. The code is stable and
// machine-readable; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  // {"code": "...", "message": "..."}
  std::string to_json() const;

 private:
  ErrorCode code_;
};

}  // namespace hvsobs
