#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace promptscope {

enum class ErrorCode {
  InvalidArgument,
  InvalidDimension,
  DimensionMismatch,
  ZeroVector,
  InvalidVector,
  EmptyInput,
  DuplicateId,
  NotFound,
  Io,
  BadMagic,
  UnsupportedVersion,
  ChecksumMismatch,
  TruncatedFile,
  InvalidRecord,
  ParseError,
  EmptyLexicon,
  UnknownLabel,
  MissingGroundTruth,
  EmptySnapshot,
  Transport,
  ServiceError,
  UnsupportedMediaType,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidDimension: return "InvalidDimension";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::InvalidVector: return "InvalidVector";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::Io: return "Io";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::InvalidRecord: return "InvalidRecord";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyLexicon: return "EmptyLexicon";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::EmptySnapshot: return "EmptySnapshot";
    case ErrorCode::Transport: return "Transport";
    case ErrorCode::ServiceError: return "ServiceError";
    case ErrorCode::UnsupportedMediaType: return "UnsupportedMediaType";
  }
  return "Unknown";
}

/// Single exception type for the library. The code is what callers branch on;
/// the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<std::size_t> line = std::nullopt)
      : std::runtime_error(format(code, message, line)), code_(code), line_(line) {}

  ErrorCode code() const noexcept { return code_; }

  /// 1-based input line for parse/import errors.
  std::optional<std::size_t> line() const noexcept { return line_; }

 private:
  static std::string format(ErrorCode code, const std::string& message,
                            std::optional<std::size_t> line) {
    std::string out(to_string(code));
    if (line) out += " (line " + std::to_string(*line) + ")";
    if (!message.empty()) out += ": " + message;
    return out;
  }

  ErrorCode code_;
  std::optional<std::size_t> line_;
};

/// Raised by provider clients for non-2xx responses.
class ServiceError : public Error {
 public:
  ServiceError(int status, std::string body)
      : Error(ErrorCode::ServiceError, "status " + std::to_string(status) + ": " + body),
        status_(status), body_(std::move(body)) {}

  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }

 private:
  int status_;
  std::string body_;
};

}  // namespace promptscope
