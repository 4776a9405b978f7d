#include "cinetraj/clean.hpp"

#include <algorithm>
#include <cmath>

#include "cinetraj/error.hpp"

namespace cinetraj {

void CleanConfig::validate() const {
  if (!(percentile > 0.0 && percentile <= 100.0) || !(scale_factor > 0.0) ||
      min_subtraj_len == 0 || max_len == 0 || rotation_window == 0) {
    throw Error(ErrorCode::kConfig, "clean config: values must be positive, percentile <= 100");
  }
  if (!(kalman_process_var > 0.0) || !(kalman_obs_var > 0.0)) {
    throw Error(ErrorCode::kConfig, "clean config: Kalman variances must be positive");
  }
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<bool> velocity_outlier_mask(const CameraTrajectory& traj, const CleanConfig& cfg) {
  cfg.validate();
  const auto twists = body_velocity(traj);
  std::vector<double> speeds;
  speeds.reserve(twists.size());
  for (const Twist& t : twists) speeds.push_back(t.linear.norm());
  const double threshold = percentile(speeds, cfg.percentile) * cfg.scale_factor;
  std::vector<bool> mask(traj.size(), false);
  for (std::size_t i = 0; i < speeds.size(); ++i) mask[i + 1] = speeds[i] > threshold;
  return mask;
}

namespace {

CameraTrajectory slice(const CameraTrajectory& traj, std::size_t begin, std::size_t end) {
  CameraTrajectory out;
  out.fps = traj.fps;
  out.poses.assign(traj.poses.begin() + begin, traj.poses.begin() + end);
  out.mask.assign(traj.mask.begin() + begin, traj.mask.begin() + end);
  return out;
}

}  // namespace

std::vector<CameraTrajectory> partition_subtrajectories(const CameraTrajectory& traj,
                                                        const std::vector<bool>& outliers,
                                                        const CleanConfig& cfg) {
  if (outliers.size() != traj.size()) {
    throw Error(ErrorCode::kShape, "partition_subtrajectories: mask length mismatch");
  }
  std::vector<CameraTrajectory> out;
  for (const auto& [b, e] : subtrajectory_ranges(outliers, cfg)) out.push_back(slice(traj, b, e));
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> subtrajectory_ranges(const std::vector<bool>& outliers,
                                                                      const CleanConfig& cfg) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t i = 0;
  while (i < outliers.size()) {
    if (outliers[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < outliers.size() && !outliers[j]) ++j;
    if (j - i >= cfg.min_subtraj_len) out.emplace_back(i, j);
    i = j;
  }
  return out;
}

std::vector<double> kalman_smooth_series(const std::vector<double>& z, double fps,
                                         const CleanConfig& cfg) {
  cfg.validate();
  const std::size_t n = z.size();
  if (n < 2) {
    throw Error(ErrorCode::kShape, "kalman_smooth: need at least 2 frames");
  }
  using Vec2 = Eigen::Vector2d;
  using Mat2 = Eigen::Matrix2d;
  const double dt = 1.0 / fps;
  Mat2 f;
  f << 1.0, dt, 0.0, 1.0;
  const double q = cfg.kalman_process_var;
  Mat2 qm;
  qm << q * dt * dt * dt / 3.0, q * dt * dt / 2.0, q * dt * dt / 2.0, q * dt;
  const double r = cfg.kalman_obs_var;

  std::vector<Vec2> x_pred(n), x_filt(n);
  std::vector<Mat2> p_pred(n), p_filt(n);

  // Initial velocity from the first difference, with the matching variance.
  x_filt[0] = Vec2(z[0], (z[1] - z[0]) * fps);
  p_filt[0] << r, r * fps, r * fps, 2.0 * r * fps * fps;
  x_pred[0] = x_filt[0];
  p_pred[0] = p_filt[0];
  for (std::size_t k = 1; k < n; ++k) {
    x_pred[k] = f * x_filt[k - 1];
    p_pred[k] = f * p_filt[k - 1] * f.transpose() + qm;
    const double innovation = z[k] - x_pred[k](0);
    const double s = p_pred[k](0, 0) + r;
    const Vec2 gain = p_pred[k].col(0) / s;
    x_filt[k] = x_pred[k] + gain * innovation;
    p_filt[k] = p_pred[k] - gain * p_pred[k].row(0);
  }

  std::vector<Vec2> x_smooth(n);
  x_smooth[n - 1] = x_filt[n - 1];
  for (std::size_t k = n - 1; k-- > 0;) {
    const Mat2 c = p_filt[k] * f.transpose() * p_pred[k + 1].inverse();
    x_smooth[k] = x_filt[k] + c * (x_smooth[k + 1] - x_pred[k + 1]);
  }
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = x_smooth[k](0);
  return out;
}

namespace {

std::vector<Vec3> smooth_points(const std::vector<Vec3>& pts, double fps, const CleanConfig& cfg) {
  std::vector<Vec3> out(pts.size());
  std::vector<double> series(pts.size());
  for (int a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < pts.size(); ++i) series[i] = pts[i](a);
    const auto smoothed = kalman_smooth_series(series, fps, cfg);
    for (std::size_t i = 0; i < pts.size(); ++i) out[i](a) = smoothed[i];
  }
  return out;
}

std::vector<Mat3> smooth_rotations(const std::vector<Se3Pose>& poses, std::size_t window) {
  const std::size_t n = poses.size();
  const std::size_t half = window / 2;
  std::vector<Eigen::Quaterniond> q(n);
  for (std::size_t i = 0; i < n; ++i) q[i] = Eigen::Quaterniond(poses[i].rotation);
  std::vector<Mat3> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n - 1, i + half);
    Eigen::Vector4d acc = Eigen::Vector4d::Zero();
    for (std::size_t j = lo; j <= hi; ++j) {
      // Sign-align to the centre quaternion before averaging.
      const double sign = q[j].dot(q[i]) < 0.0 ? -1.0 : 1.0;
      acc += sign * q[j].coeffs();
    }
    Eigen::Quaterniond mean;
    mean.coeffs() = acc.normalized();
    out[i] = mean.toRotationMatrix();
  }
  return out;
}

}  // namespace

CameraTrajectory kalman_smooth(const CameraTrajectory& traj, const CleanConfig& cfg) {
  std::vector<Vec3> t(traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) t[i] = traj.poses[i].translation;
  const auto ts = smooth_points(t, traj.fps, cfg);

  // A rotation sequence that is already constant is returned bitwise.
  bool constant_rotation = true;
  for (const auto& p : traj.poses) {
    if (p.rotation != traj.poses.front().rotation) {
      constant_rotation = false;
      break;
    }
  }
  std::vector<Mat3> rs;
  if (!constant_rotation) rs = smooth_rotations(traj.poses, cfg.rotation_window);

  CameraTrajectory out = traj;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    out.poses[i].translation = ts[i];
    if (!constant_rotation) out.poses[i].rotation = rs[i];
  }
  return out;
}

CharacterTrajectory kalman_smooth(const CharacterTrajectory& traj, const CleanConfig& cfg) {
  CharacterTrajectory out = traj;
  out.hips = smooth_points(traj.hips, traj.fps, cfg);
  return out;
}

CameraTrajectory crop(const CameraTrajectory& traj, std::size_t max_len) {
  return slice(traj, 0, std::min(traj.size(), max_len));
}

CharacterTrajectory crop(const CharacterTrajectory& traj, std::size_t max_len) {
  CharacterTrajectory out = traj;
  if (out.hips.size() > max_len) out.hips.resize(max_len);
  if (out.vertices.size() > max_len) out.vertices.resize(max_len);
  return out;
}

std::vector<CameraTrajectory> clean_trajectory(const CameraTrajectory& traj,
                                               const CleanConfig& cfg) {
  cfg.validate();
  if (traj.size() < 2) return {};
  const auto outliers = velocity_outlier_mask(traj, cfg);
  std::vector<CameraTrajectory> out;
  for (const auto& sub : partition_subtrajectories(traj, outliers, cfg)) {
    out.push_back(crop(sub.size() >= 2 ? kalman_smooth(sub, cfg) : sub, cfg.max_len));
  }
  return out;
}

std::vector<CleanedPiece> clean_shot(const CameraTrajectory& camera, const CharacterTrajectory& character,
                                     const CleanConfig& cfg) {
  cfg.validate();
  const bool with_char = !character.hips.empty();
  if (with_char && character.size() != camera.size()) {
    throw Error(ErrorCode::kShape, "clean_shot: character and camera lengths differ");
  }
  std::vector<CleanedPiece> out;
  if (camera.size() < 2) return out;
  for (const auto& [b, e] : subtrajectory_ranges(velocity_outlier_mask(camera, cfg), cfg)) {
    CleanedPiece p;
    p.source_start = b;
    const CameraTrajectory sub = slice(camera, b, e);
    p.camera = crop(sub.size() >= 2 ? kalman_smooth(sub, cfg) : sub, cfg.max_len);
    if (with_char) {
      CharacterTrajectory c;
      c.fps = character.fps;
      c.hips.assign(character.hips.begin() + b, character.hips.begin() + e);
      if (!character.vertices.empty()) {
        c.vertices.assign(character.vertices.begin() + b, character.vertices.begin() + e);
      }
      p.character = crop(c.size() >= 2 ? kalman_smooth(c, cfg) : c, cfg.max_len);
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace cinetraj
