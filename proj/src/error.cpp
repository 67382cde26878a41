#include "medrag/error.hpp"

namespace medrag {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Config: return "ConfigError";
    case ErrorCode::Transport: return "TransportError";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::EmptyGeneration: return "EmptyGeneration";
    case ErrorCode::BadPolicy: return "BadPolicy";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::EmptyQuery: return "EmptyQuery";
    case ErrorCode::Parse: return "ParseError";
    case ErrorCode::DuplicateFeatureName: return "DuplicateFeatureName";
    case ErrorCode::BadFeatureName: return "BadFeatureName";
    case ErrorCode::NoScoreFound: return "NoScoreFound";
    case ErrorCode::Syntax: return "SyntaxError";
    case ErrorCode::UnknownFunction: return "UnknownFunction";
    case ErrorCode::UnresolvedIdent: return "UnresolvedIdent";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownFeatureSpace: return "UnknownFeatureSpace";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::DigestMismatch: return "DigestMismatch";
    case ErrorCode::EmptyDialogue: return "EmptyDialogue";
    case ErrorCode::NoPrediction: return "NoPrediction";
    case ErrorCode::EmptyTestset: return "EmptyTestset";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::SessionClosed: return "SessionClosed";
    case ErrorCode::EmptyMessage: return "EmptyMessage";
    case ErrorCode::NotPredicted: return "NotPredicted";
    case ErrorCode::Busy: return "Busy";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::Validation: return "ValidationError";
  }
  return "Error";
}

}  // namespace medrag
