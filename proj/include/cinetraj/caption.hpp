#pragma once

#include <chrono>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cinetraj/tagging.hpp"

namespace cinetraj {

struct Outline {
  /// Frame count of the shot; segments cover [0, total_frames - 1].
  std::size_t total_frames = 0;
  std::string camera_line;
  std::string character_line;
};

enum class CaptionKind { kCameraOnly, kCameraCharacter };

struct Caption {
  std::string text;
  CaptionKind kind = CaptionKind::kCameraCharacter;
};

std::string_view to_string(CaptionKind kind);
CaptionKind caption_kind_from_string(std::string_view s);

/// "Between frames A and B: label" items joined by ", ".
std::string format_segments(std::span<const TagSegment> segs);
/// Inverse of format_segments.
std::vector<TagSegment> parse_segments(std::string_view line);

/// An empty character list is filled with one static segment.
Outline build_outline(std::span<const TagSegment> camera, std::span<const TagSegment> character,
                      std::size_t n_frames);

/// The caption prompt template, verbatim.
std::string_view prompt_template();
/// Template with the frame count and both motion outlines substituted. The
/// printed frame total is the last frame index, as in the in-context example.
std::string build_llm_prompt(const Outline& outline);

/// Deterministic caption over the closed caption vocabulary.
Caption rule_based_caption(std::span<const TagSegment> camera,
                           std::span<const TagSegment> character,
                           CaptionKind kind = CaptionKind::kCameraCharacter);

/// Camera labels named by a rule-based caption, in order of appearance.
std::vector<std::string> caption_camera_labels(std::string_view text);

struct LlmRequest {
  std::string endpoint;  // http://host[:port]/path
  std::string key;
  std::string prompt;
  std::chrono::milliseconds timeout{30000};
  int max_tokens = 128;
  double temperature = 0.0;
};

/// POSTs {"prompt", "max_tokens", "temperature"} and reads {"completion"}.
/// Transport problems are reported as Error (kTransport or kTimeout).
Caption llm_caption(const LlmRequest& request);

}  // namespace cinetraj
