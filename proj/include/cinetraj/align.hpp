#pragma once

#include <span>
#include <utility>
#include <vector>

#include "cinetraj/geom.hpp"

namespace cinetraj {

inline constexpr std::size_t kMaxChunkFrames = 100;
inline constexpr std::size_t kDefaultOverlap = 10;

/// One independently estimated piece of a shot. `overlap_len` counts the
/// trailing frames shared with the next chunk (ignored for the last chunk).
struct Chunk {
  CameraTrajectory cameras;
  CharacterTrajectory character;
  std::size_t overlap_len = kDefaultOverlap;
};

/// Maps a later chunk's translations into the earlier one: t_ref = s * t + b.
struct ScaleBias {
  double s = 1.0;
  Vec3 b = Vec3::Zero();
  /// Root-mean-square residual of the fit, meters.
  double residual_rms = 0.0;

  Vec3 apply(const Vec3& t) const { return s * t + b; }
  /// Composition: (outer ∘ inner)(t) = outer(inner(t)).
  static ScaleBias compose(const ScaleBias& outer, const ScaleBias& inner);
};

/// Least-squares fit of t_ref ≈ s * t_next + b over paired frames.
ScaleBias estimate_scale_bias(std::span<const Vec3> t_ref, std::span<const Vec3> t_next);

/// Translation of the per-frame correction R^T (t - (s t + b)); its rotation
/// part is identity.
Vec3 alignment_transform(const ScaleBias& sb, const Se3Pose& pose_next);

/// Shifts every vertex by alignment_transform(sb, pose_next).
std::vector<Vec3> align_vertices(std::span<const Vec3> vertices, const ScaleBias& sb,
                                 const Se3Pose& pose_next);

struct AlignedShot {
  CameraTrajectory cameras;
  CharacterTrajectory character;
  /// Chunk-to-reference transform for every chunk (first one is identity).
  std::vector<ScaleBias> transforms;
};

/// Cascades every chunk into chunk 0's frame. Overlapping frames keep the
/// earlier chunk's values. Rotations are copied untouched.
AlignedShot align_chunks(std::span<const Chunk> chunks);

}  // namespace cinetraj
