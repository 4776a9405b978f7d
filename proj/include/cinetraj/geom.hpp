#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace cinetraj {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Longest trajectory accepted anywhere in the pipeline.
inline constexpr std::size_t kMaxFrames = 300;

/// Rigid camera pose, world-from-camera. Right-handed, +y up, the camera
/// looks along its body -z axis.
struct Se3Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Se3Pose identity() { return {}; }
};

/// First two rotation columns, column-major: (c0x, c0y, c0z, c1x, c1y, c1z).
using Rot6D = std::array<double, 6>;

struct CameraTrajectory {
  double fps = 25.0;
  std::vector<Se3Pose> poses;
  std::vector<bool> mask;

  std::size_t size() const { return poses.size(); }
};

struct CharacterTrajectory {
  double fps = 25.0;
  std::vector<Vec3> hips;
  /// Optional mesh vertices, one vertex list per frame (empty when absent).
  std::vector<std::vector<Vec3>> vertices;

  std::size_t size() const { return hips.size(); }
};

/// Body-frame rigid velocity: linear in m/s, angular in rad/s.
struct Twist {
  Vec3 linear = Vec3::Zero();
  Vec3 angular = Vec3::Zero();
};

/// Orthonormality and determinant check for a rotation matrix.
bool is_rotation(const Mat3& r, double tol = 1e-6);

Rot6D rot_to_6d(const Mat3& r);
/// Gram-Schmidt on the two stored columns, third column by cross product.
Mat3 rot_from_6d(const Rot6D& d);

Se3Pose se3_compose(const Se3Pose& a, const Se3Pose& b);
Se3Pose se3_inverse(const Se3Pose& a);

Mat3 hat(const Vec3& w);
Vec3 so3_log(const Mat3& r);
Mat3 so3_exp(const Vec3& w);
/// Twist (v, w) with exp(twist) == pose; units are per unit time step.
Twist se3_log(const Se3Pose& pose);
Se3Pose se3_exp(const Twist& xi);

/// Twist i is log(pose_i^-1 * pose_{i+1}) * fps; returns N-1 twists.
std::vector<Twist> body_velocity(const CameraTrajectory& traj);
/// Forward differences scaled by fps; returns N-1 vectors.
std::vector<Vec3> linear_velocity(std::span<const Vec3> points, double fps);

/// Throws on a trajectory that violates the length, mask or rotation
/// invariants.
void validate(const CameraTrajectory& traj, double rotation_tol = 1e-6);

CameraTrajectory make_trajectory(std::vector<Se3Pose> poses, double fps);

}  // namespace cinetraj
