#include "hvsobs/error.hpp"

#include <nlohmann/json.hpp>

namespace hvsobs {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::length_mismatch: return "length_mismatch";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::symmetry_violation: return "symmetry_violation";
    case ErrorCode::singular: return "singular";
    case ErrorCode::io: return "io";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::out_of_order: return "out_of_order";
    case ErrorCode::validation: return "validation";
  }
  return "unknown";
}

std::string Error::to_json() const {
  nlohmann::json j;
  j["code"] = std::string(to_string(code_));
  j["message"] = what();
  return j.dump();
}

}  // namespace hvsobs
