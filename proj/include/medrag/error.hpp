#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace medrag {

enum class ErrorCode {
  Config,
  Transport,
  EmptyText,
  EmptyGeneration,
  BadPolicy,
  EmptyCorpus,
  DimMismatch,
  EmptyIndex,
  EmptyQuery,
  Parse,
  DuplicateFeatureName,
  BadFeatureName,
  NoScoreFound,
  Syntax,
  UnknownFunction,
  UnresolvedIdent,
  ShapeMismatch,
  UnknownFeatureSpace,
  Io,
  VersionMismatch,
  DigestMismatch,
  EmptyDialogue,
  NoPrediction,
  EmptyTestset,
  BadSpec,
  SessionClosed,
  EmptyMessage,
  NotPredicted,
  Busy,
  NotFound,
  Validation,
};

std::string_view to_string(ErrorCode code) noexcept;

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t offset, const std::string& what)
      : Error(ErrorCode::Syntax, what), offset_(offset) {}

  /// Byte offset into the parsed source.
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace medrag
