#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace weicom {

enum class ErrorCode {
  InvalidArgument,
  IoError,
  FormatError,
  CountMismatch,
  DuplicateId,
  DuplicateText,
  ZeroVector,
  UnknownText,
  UnknownId,
  DimMismatch,
  LengthMismatch,
  TooFewCandidates,
  LambdaOutOfRange,
  EmptyValueGroup,
  SingleValueAttribute,
  NoPositives,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::DuplicateText: return "DuplicateText";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::UnknownText: return "UnknownText";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooFewCandidates: return "TooFewCandidates";
    case ErrorCode::LambdaOutOfRange: return "LambdaOutOfRange";
    case ErrorCode::EmptyValueGroup: return "EmptyValueGroup";
    case ErrorCode::SingleValueAttribute: return "SingleValueAttribute";
    case ErrorCode::NoPositives: return "NoPositives";
  }
  return "Unknown";
}

/// Every library failure is reported through this type. `row()` is set when
/// the failure can be pinned to one row of an input matrix or metadata file.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::optional<std::size_t> row = std::nullopt)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), row_(row) {}

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> row() const noexcept { return row_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> row_;
};

}  // namespace weicom
