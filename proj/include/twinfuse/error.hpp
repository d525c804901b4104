#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace twinfuse {

enum class ErrorCode {
  kFrameMismatch,
  kInsufficientCorrespondences,
  kDegenerateGeometry,
  kParameter,
  kEmptyOverlap,
  kReference,
  kBehindCamera,
  kConvergence,
  kInsufficientViews,
  kNoOverlap,
  kCorrespondence,
  kAmbiguity,
  kEmptySelection,
  kDuplicateName,
  kIo,
  kParse,
  kVersion,
  kUnknownEntity,
};

std::string_view error_code_name(ErrorCode code);

// All library failures are reported through this exception type. The code
// identifies the failure class; the message carries the context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace twinfuse
