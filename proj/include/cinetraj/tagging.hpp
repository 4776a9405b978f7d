#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cinetraj/geom.hpp"

namespace cinetraj {

/// Per-axis motion state in {-1, 0, +1}; 27 combinations.
struct AxisState {
  std::array<int, 3> v{0, 0, 0};

  AxisState() = default;
  AxisState(int x, int y, int z) : v{x, y, z} {}

  int& operator[](int a) { return v[a]; }
  int operator[](int a) const { return v[a]; }
  bool is_static() const { return v[0] == 0 && v[1] == 0 && v[2] == 0; }
  friend bool operator==(const AxisState&, const AxisState&) = default;
};

/// Index in [0, 27) with x as the most significant ternary digit.
int state_index(const AxisState& s);
AxisState state_from_index(int index);

struct TagConfig {
  /// Per-axis speed at or below which the axis is static, m/s.
  double static_thresh_lin = 0.10;
  /// Axis a is outmatched when |v_a| / |v_b| < dominance_ratio for some b.
  double dominance_ratio = 0.5;
  std::size_t smooth_window = 25;
  std::size_t min_segment_len = 25;

  void validate() const;
};

struct TagSegment {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // inclusive
  std::string label;

  friend bool operator==(const TagSegment&, const TagSegment&) = default;
};

enum class Vocab { kCamera, kCharacter };

/// Canonical label; composites are hyphen-joined in x, y, z order.
std::string label_for(const AxisState& s, Vocab vocab);
/// Inverse of label_for; throws on an unknown label.
AxisState state_for(std::string_view label, Vocab vocab);
/// Single-axis terms for one vocabulary, in axis order (-1 then +1 per axis).
const std::array<std::string_view, 6>& directional_terms(Vocab vocab);

std::vector<AxisState> axis_states(std::span<const Vec3> velocities, const TagConfig& cfg);

/// Tags from the body-frame linear velocity; x truck, y boom, z push/pull.
/// Returns N states (the last velocity is repeated for the final frame).
std::vector<AxisState> camera_frame_tags(const CameraTrajectory& traj, const TagConfig& cfg);

/// Tags from hip velocity expressed in a reference frame derived from the
/// camera orientation `reference` (horizontal heading, world vertical).
std::vector<AxisState> character_frame_tags(const CharacterTrajectory& traj, const TagConfig& cfg,
                                             const Mat3& reference = Mat3::Identity());

/// Per-axis windowed vote: a sign survives only if its net count exceeds half
/// of the (border-clamped) window, otherwise the axis becomes 0.
std::vector<AxisState> smooth_tags(std::span<const AxisState> states, const TagConfig& cfg);

/// Runs of identical states, short runs merged into their longer neighbour.
std::vector<TagSegment> segment_tags(std::span<const AxisState> states, Vocab vocab,
                                     const TagConfig& cfg);

/// Full pipeline: frame tags, smoothing, segmentation.
std::vector<TagSegment> tag_camera(const CameraTrajectory& traj, const TagConfig& cfg);
std::vector<TagSegment> tag_character(const CharacterTrajectory& traj, const TagConfig& cfg,
                                      const Mat3& reference = Mat3::Identity());

struct Box {
  std::size_t frame = 0;
  double x = 0, y = 0, w = 0, h = 0;  // pixels
};

struct Track {
  int id = 0;
  std::vector<Box> boxes;
};

/// Score = (mean box area / frame_area) * (frames present / total frames),
/// ties go to the lowest id. When total_frames is 0 it is the frame span
/// covered by all tracks.
int select_main_character(std::span<const Track> tracks, double frame_area,
                          std::size_t total_frames = 0);

}  // namespace cinetraj
