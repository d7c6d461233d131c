#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace icsml {

enum class ErrorCode {
  CapacityExceeded,
  IndexOutOfBounds,
  UnsupportedKind,
  EmptyVector,
  ShapeMismatch,
  ManifestInvalid,
  FileMissing,
  SizeMismatch,
  IOFailure,
  SyntaxError,
  SchemaError,
  RefError,
  InfeasibleBudget,
  StaleInput,
  TaskFault,
  UnsupportedLayer,
  IdentifierClash,
  DegenerateInput,
  WindowNotFull,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::CapacityExceeded: return "CapacityExceeded";
    case ErrorCode::IndexOutOfBounds: return "IndexOutOfBounds";
    case ErrorCode::UnsupportedKind: return "UnsupportedKind";
    case ErrorCode::EmptyVector: return "EmptyVector";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ManifestInvalid: return "ManifestInvalid";
    case ErrorCode::FileMissing: return "FileMissing";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::IOFailure: return "IOFailure";
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::RefError: return "RefError";
    case ErrorCode::InfeasibleBudget: return "InfeasibleBudget";
    case ErrorCode::StaleInput: return "StaleInput";
    case ErrorCode::TaskFault: return "TaskFault";
    case ErrorCode::UnsupportedLayer: return "UnsupportedLayer";
    case ErrorCode::IdentifierClash: return "IdentifierClash";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::WindowNotFull: return "WindowNotFull";
  }
  return "Unknown";
}

// All library failures surface as this exception; code() carries the kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace icsml
