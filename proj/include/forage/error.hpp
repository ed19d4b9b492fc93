#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace forage {

enum class ErrorCode {
  Degenerate,
  SpawnOverlap,
  Unstable,
  SequenceExhausted,
  DegeneratePool,
  FirstTargetMissed,
  UnknownOrganism,
  UnknownStage,
  NoKeyOrganism,
  LineageMismatch,
  InvalidConfig,
  Parse,
  Io,
};

constexpr std::string_view error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::Degenerate: return "Degenerate";
    case ErrorCode::SpawnOverlap: return "SpawnOverlap";
    case ErrorCode::Unstable: return "Unstable";
    case ErrorCode::SequenceExhausted: return "SequenceExhausted";
    case ErrorCode::DegeneratePool: return "DegeneratePool";
    case ErrorCode::FirstTargetMissed: return "FirstTargetMissed";
    case ErrorCode::UnknownOrganism: return "UnknownOrganism";
    case ErrorCode::UnknownStage: return "UnknownStage";
    case ErrorCode::NoKeyOrganism: return "NoKeyOrganism";
    case ErrorCode::LineageMismatch: return "LineageMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Parse: return "Parse";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace forage
