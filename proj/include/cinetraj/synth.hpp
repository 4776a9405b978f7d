#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "cinetraj/caption.hpp"
#include "cinetraj/etj.hpp"
#include "cinetraj/geom.hpp"
#include "cinetraj/tagging.hpp"

namespace cinetraj {

/// Canonical speed: 20 m over 300 frames at 25 fps.
inline constexpr double kCanonicalSpeed = 1.67;

/// Hip position at frame 0: standing 4 m in front of the camera.
inline const Vec3 kCharacterStart{0.0, 1.0, -4.0};

/// The six single-axis motions, in axis order (-x, +x, -y, +y, -z, +z).
std::vector<AxisState> pure_motions();
/// All 27 axis states in state_index order.
std::vector<AxisState> all_motions();

struct SynthSpec {
  std::size_t n_samples = 10;
  std::size_t frames = 100;
  double fps = 25.0;
  double speed = kCanonicalSpeed;  // m/s, total over active axes
  double noise_sigma = 0.0;        // m, added to camera translations and hips
  std::vector<AxisState> motion_menu = pure_motions();
  /// Character tags are drawn uniformly from here; empty means the camera
  /// menu plus static.
  std::vector<AxisState> character_menu;
  /// Character copies the camera's first motion instead of drawing a tag.
  bool follow_character = false;
  CaptionKind caption_kind = CaptionKind::kCameraCharacter;
  /// Trailing fraction of samples written with split "val".
  double val_fraction = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

SynthSpec synth_spec_from_json(const nlohmann::json& j);

struct SynthSample {
  CameraTrajectory camera;
  CharacterTrajectory character;
  Caption caption;
  std::vector<TagSegment> camera_segments;
  std::vector<TagSegment> character_segments;
};

struct MotionPiece {
  AxisState tag;
  std::size_t frames = 0;
};

/// Camera moves along the tag's body axes at constant total speed with a
/// fixed identity orientation, starting at the origin.
SynthSample gen_pure(const AxisState& tag, const SynthSpec& spec, std::mt19937_64& rng);
/// Piecewise-pure camera motion, continuous at the joins. Durations must sum
/// to spec.frames.
SynthSample gen_mixed(std::span<const MotionPiece> pieces, const SynthSpec& spec,
                      std::mt19937_64& rng);

/// Sample i uses motion_menu[i % size]; deterministic for a given seed.
std::vector<SynthSample> gen_samples(const SynthSpec& spec);

EtjDocument to_etj(const SynthSample& s);

/// Writes sample_NNNNN.etj files and manifest.json under `out_dir`.
std::vector<ManifestEntry> gen_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace cinetraj
