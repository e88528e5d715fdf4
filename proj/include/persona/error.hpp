#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace persona {

enum class ErrorCode {
  invalid_argument,
  malformed_document,
  duplicate_id,
  broken_sister,
  unknown_reference,
  unknown_id,
  shape_mismatch,
  non_finite,
  degenerate_direction,
  degenerate_trait,
  extraction_impossible,
  calibration_failure,
  missing_coverage,
  mode_mismatch,
  version_mismatch,
  checksum_failure,
  library_mismatch,
  transport_failure,
  protocol_violation,
  provider_failure,
  parse_failure,
  replay_miss,
  config_error,
  not_found,
  conflict,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::malformed_document: return "malformed_document";
    case ErrorCode::duplicate_id: return "duplicate_id";
    case ErrorCode::broken_sister: return "broken_sister";
    case ErrorCode::unknown_reference: return "unknown_reference";
    case ErrorCode::unknown_id: return "unknown_id";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::degenerate_direction: return "degenerate_direction";
    case ErrorCode::degenerate_trait: return "degenerate_trait";
    case ErrorCode::extraction_impossible: return "extraction_impossible";
    case ErrorCode::calibration_failure: return "calibration_failure";
    case ErrorCode::missing_coverage: return "missing_coverage";
    case ErrorCode::mode_mismatch: return "mode_mismatch";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::checksum_failure: return "checksum_failure";
    case ErrorCode::library_mismatch: return "library_mismatch";
    case ErrorCode::transport_failure: return "transport_failure";
    case ErrorCode::protocol_violation: return "protocol_violation";
    case ErrorCode::provider_failure: return "provider_failure";
    case ErrorCode::parse_failure: return "parse_failure";
    case ErrorCode::replay_miss: return "replay_miss";
    case ErrorCode::config_error: return "config_error";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
  }
  return "unknown";
}

/// Base exception for everything the library throws. The code is stable and
/// machine-readable; the message names the offending entry where there is one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// True for failures caused by something outside the process (network,
/// provider, model server, missing replay fixture).
constexpr bool is_upstream(ErrorCode code) {
  return code == ErrorCode::transport_failure || code == ErrorCode::protocol_violation ||
         code == ErrorCode::provider_failure || code == ErrorCode::parse_failure ||
         code == ErrorCode::replay_miss;
}

}  // namespace persona
