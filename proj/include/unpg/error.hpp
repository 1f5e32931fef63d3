#pragma once

#include <stdexcept>
#include <string>

namespace unpg {

enum class ErrorCode {
  ZeroNorm,
  DimensionMismatch,
  LabelOutOfRange,
  EmptyInput,
  OriginMismatch,
  EmptyPositives,
  EmptyNegatives,
  EmptyGallery,
  InsufficientData,
  InsufficientPairs,
  InvalidArgument,
  ConfigInvalid,
  IoFailure,
  CheckpointCorrupt,
  RunIncomplete,
  NonFinite,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroNorm: return "ZeroNorm";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::OriginMismatch: return "OriginMismatch";
    case ErrorCode::EmptyPositives: return "EmptyPositives";
    case ErrorCode::EmptyNegatives: return "EmptyNegatives";
    case ErrorCode::EmptyGallery: return "EmptyGallery";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::InsufficientPairs: return "InsufficientPairs";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::CheckpointCorrupt: return "CheckpointCorrupt";
    case ErrorCode::RunIncomplete: return "RunIncomplete";
    case ErrorCode::NonFinite: return "NonFinite";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace unpg
