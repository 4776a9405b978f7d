#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cinetraj {

enum class ErrorCode {
  kInvalidRotation,
  kDegenerate6d,
  kDegenerateOverlap,
  kNegativeScale,
  kConfig,
  kShape,
  kMalformedSegments,
  kNoCharacter,
  kTransport,
  kTimeout,
  kFormat,
  kIo,
  kSamplerDivergence,
  kNonFiniteLoss,
  kInput,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; the code drives CLI exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cinetraj
