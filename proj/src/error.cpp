#include "twinfuse/error.hpp"

namespace twinfuse {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kFrameMismatch: return "frame-mismatch";
    case ErrorCode::kInsufficientCorrespondences: return "insufficient-correspondences";
    case ErrorCode::kDegenerateGeometry: return "degenerate-geometry";
    case ErrorCode::kParameter: return "parameter";
    case ErrorCode::kEmptyOverlap: return "empty-overlap";
    case ErrorCode::kReference: return "reference";
    case ErrorCode::kBehindCamera: return "behind-camera";
    case ErrorCode::kConvergence: return "convergence";
    case ErrorCode::kInsufficientViews: return "insufficient-views";
    case ErrorCode::kNoOverlap: return "no-overlap";
    case ErrorCode::kCorrespondence: return "correspondence";
    case ErrorCode::kAmbiguity: return "ambiguity";
    case ErrorCode::kEmptySelection: return "empty-selection";
    case ErrorCode::kDuplicateName: return "duplicate-name";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kVersion: return "version";
    case ErrorCode::kUnknownEntity: return "unknown-entity";
  }
  return "unknown";
}

}  // namespace twinfuse
