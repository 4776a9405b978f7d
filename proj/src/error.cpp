#include "cinetraj/error.hpp"

namespace cinetraj {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidRotation: return "invalid-rotation";
    case ErrorCode::kDegenerate6d: return "degenerate-6d";
    case ErrorCode::kDegenerateOverlap: return "degenerate-overlap";
    case ErrorCode::kNegativeScale: return "negative-scale";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kMalformedSegments: return "malformed-segments";
    case ErrorCode::kNoCharacter: return "no-character";
    case ErrorCode::kTransport: return "transport";
    case ErrorCode::kTimeout: return "timeout";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kSamplerDivergence: return "sampler-divergence";
    case ErrorCode::kNonFiniteLoss: return "non-finite-loss";
    case ErrorCode::kInput: return "input";
  }
  return "unknown";
}

}  // namespace cinetraj
