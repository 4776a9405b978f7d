#pragma once

#include <utility>
#include <vector>

#include "cinetraj/geom.hpp"

namespace cinetraj {

struct CleanConfig {
  double percentile = 95.0;
  double scale_factor = 1.5;
  std::size_t min_subtraj_len = 25;
  std::size_t max_len = kMaxFrames;
  /// White-noise acceleration spectral density, (m/s^2)^2.
  double kalman_process_var = 1e-2;
  /// Position observation variance, m^2.
  double kalman_obs_var = 1e-3;
  /// Frames in the spherical moving average applied to rotations.
  std::size_t rotation_window = 5;

  void validate() const;
};

/// Linear-interpolated percentile of `values` (q in [0, 100]).
double percentile(std::vector<double> values, double q);

/// Frame i (i >= 1) is an outlier when the body-frame speed arriving at it
/// exceeds percentile(speeds) * scale_factor. Frame 0 is never flagged.
std::vector<bool> velocity_outlier_mask(const CameraTrajectory& traj, const CleanConfig& cfg);

/// Half-open [begin, end) frame ranges of the runs kept by the partition.
std::vector<std::pair<std::size_t, std::size_t>> subtrajectory_ranges(const std::vector<bool>& outliers,
                                                                      const CleanConfig& cfg);

/// Maximal runs of unflagged frames that are at least min_subtraj_len long.
std::vector<CameraTrajectory> partition_subtrajectories(const CameraTrajectory& traj,
                                                        const std::vector<bool>& outliers,
                                                        const CleanConfig& cfg);

/// Constant-velocity Kalman filter plus RTS smoother on one coordinate series.
std::vector<double> kalman_smooth_series(const std::vector<double>& z, double fps,
                                         const CleanConfig& cfg);

/// Translations through the per-axis Kalman/RTS smoother, rotations through a
/// windowed spherical average.
CameraTrajectory kalman_smooth(const CameraTrajectory& traj, const CleanConfig& cfg);
CharacterTrajectory kalman_smooth(const CharacterTrajectory& traj, const CleanConfig& cfg);

CameraTrajectory crop(const CameraTrajectory& traj, std::size_t max_len = kMaxFrames);
CharacterTrajectory crop(const CharacterTrajectory& traj, std::size_t max_len = kMaxFrames);

/// Outlier mask, partition, smoothing and cropping in sequence.
std::vector<CameraTrajectory> clean_trajectory(const CameraTrajectory& traj,
                                               const CleanConfig& cfg);

struct CleanedPiece {
  CameraTrajectory camera;
  CharacterTrajectory character;  // empty when the input had none
  std::size_t source_start = 0;   // first input frame of the piece
};

/// clean_trajectory with the paired character cut and smoothed alongside.
std::vector<CleanedPiece> clean_shot(const CameraTrajectory& camera, const CharacterTrajectory& character,
                                     const CleanConfig& cfg);

}  // namespace cinetraj
