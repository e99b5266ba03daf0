#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flakeless {

enum class ErrorCode {
  kInvalidLayout,
  kFieldOverflow,
  kSignBitSet,
  kSimulationStall,
  kInvalidConfig,
  kInvalidArgument,
  kClockMovedBackwards,
  kTimestampExhausted,
  kBatchTooLarge,
  kInvalidAddress,
  kEmptySaltOrUid,
  kMetadataUnreachable,
  kMetadataMalformed,
  kNoUsableAddress,
  kResolutionFailed,
  kScenarioInvalid,
  kCapacityExhausted,
};

// Stable snake_case names, used as machine-readable reasons on the wire.
constexpr std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidLayout: return "invalid_layout";
    case ErrorCode::kFieldOverflow: return "field_overflow";
    case ErrorCode::kSignBitSet: return "sign_bit_set";
    case ErrorCode::kSimulationStall: return "simulation_stall";
    case ErrorCode::kInvalidConfig: return "invalid_config";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kClockMovedBackwards: return "clock_moved_backwards";
    case ErrorCode::kTimestampExhausted: return "timestamp_exhausted";
    case ErrorCode::kBatchTooLarge: return "batch_too_large";
    case ErrorCode::kInvalidAddress: return "invalid_address";
    case ErrorCode::kEmptySaltOrUid: return "empty_salt_or_uid";
    case ErrorCode::kMetadataUnreachable: return "metadata_unreachable";
    case ErrorCode::kMetadataMalformed: return "metadata_malformed";
    case ErrorCode::kNoUsableAddress: return "no_usable_address";
    case ErrorCode::kResolutionFailed: return "resolution_failed";
    case ErrorCode::kScenarioInvalid: return "scenario_invalid";
    case ErrorCode::kCapacityExhausted: return "capacity_exhausted";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code), cause_(code) {}

  // For errors that wrap another failure, e.g. ResolutionFailed.
  Error(ErrorCode code, ErrorCode cause, const std::string& message)
      : std::runtime_error(message), code_(code), cause_(cause) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCode cause() const noexcept { return cause_; }

 private:
  ErrorCode code_;
  ErrorCode cause_;
};

}  // namespace flakeless
