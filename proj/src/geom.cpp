#include "cinetraj/geom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cinetraj/error.hpp"

namespace cinetraj {
namespace {

constexpr double kSmallAngle = 1e-6;
constexpr double kNearPi = 1e-9;

Vec3 vee(const Mat3& m) { return {m(2, 1), m(0, 2), m(1, 0)}; }

// Inverse of the left Jacobian of SO(3), used to map a translation back to
// the linear part of the twist.
Mat3 left_jacobian_inverse(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 wx = hat(w);
  double coef;
  if (theta < kSmallAngle) {
    coef = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    coef = (1.0 - theta * std::sin(theta) / (2.0 * (1.0 - std::cos(theta)))) /
           (theta * theta);
  }
  return Mat3::Identity() - 0.5 * wx + coef * wx * wx;
}

Mat3 left_jacobian(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 wx = hat(w);
  double a, b;
  if (theta < kSmallAngle) {
    a = 0.5 - theta * theta / 24.0;
    b = 1.0 / 6.0 - theta * theta / 120.0;
  } else {
    const double t2 = theta * theta;
    a = (1.0 - std::cos(theta)) / t2;
    b = (theta - std::sin(theta)) / (t2 * theta);
  }
  return Mat3::Identity() + a * wx + b * wx * wx;
}

}  // namespace

bool is_rotation(const Mat3& r, double tol) {
  if (!r.allFinite()) return false;
  const double ortho = (r.transpose() * r - Mat3::Identity()).norm();
  return ortho < tol && std::abs(r.determinant() - 1.0) <= tol;
}

Rot6D rot_to_6d(const Mat3& r) {
  if (!is_rotation(r)) {
    throw Error(ErrorCode::kInvalidRotation, "rot_to_6d: matrix is not a rotation");
  }
  return {r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1)};
}

Mat3 rot_from_6d(const Rot6D& d) {
  const Vec3 a1(d[0], d[1], d[2]);
  const Vec3 a2(d[3], d[4], d[5]);
  const double n1 = a1.norm();
  if (!(n1 > 1e-9)) {
    throw Error(ErrorCode::kDegenerate6d, "rot_from_6d: first column has zero norm");
  }
  const Vec3 b1 = a1 / n1;
  const Vec3 u2 = a2 - b1.dot(a2) * b1;
  const double n2 = u2.norm();
  if (!(n2 > 1e-9)) {
    throw Error(ErrorCode::kDegenerate6d, "rot_from_6d: columns are parallel");
  }
  const Vec3 b2 = u2 / n2;
  Mat3 r;
  r.col(0) = b1;
  r.col(1) = b2;
  r.col(2) = b1.cross(b2);
  return r;
}

Se3Pose se3_compose(const Se3Pose& a, const Se3Pose& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

Se3Pose se3_inverse(const Se3Pose& a) {
  const Mat3 rt = a.rotation.transpose();
  return {rt, -rt * a.translation};
}

Mat3 hat(const Vec3& w) {
  Mat3 m;
  m << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return m;
}

Vec3 so3_log(const Mat3& r) {
  const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(c);
  if (theta < kSmallAngle) {
    return 0.5 * vee(r - r.transpose()) * (1.0 + theta * theta / 6.0);
  }
  if (std::numbers::pi - theta < kNearPi) {
    // sin(theta) ~ 0: recover the axis from the symmetric part (R + I) / 2 = a a^T.
    const Mat3 s = 0.5 * (r + Mat3::Identity());
    int k = 0;
    s.diagonal().maxCoeff(&k);
    Vec3 axis = s.col(k) / std::sqrt(std::max(s(k, k), 1e-300));
    axis.normalize();
    return axis * theta;
  }
  return theta / (2.0 * std::sin(theta)) * vee(r - r.transpose());
}

Mat3 so3_exp(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 wx = hat(w);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + wx + 0.5 * wx * wx;
  }
  return Mat3::Identity() + std::sin(theta) / theta * wx +
         (1.0 - std::cos(theta)) / (theta * theta) * wx * wx;
}

Twist se3_log(const Se3Pose& pose) {
  Twist xi;
  xi.angular = so3_log(pose.rotation);
  xi.linear = left_jacobian_inverse(xi.angular) * pose.translation;
  return xi;
}

Se3Pose se3_exp(const Twist& xi) {
  return {so3_exp(xi.angular), left_jacobian(xi.angular) * xi.linear};
}

std::vector<Twist> body_velocity(const CameraTrajectory& traj) {
  const std::size_t n = traj.size();
  if (n < 2) {
    throw Error(ErrorCode::kShape, "body_velocity: need at least 2 poses");
  }
  std::vector<Twist> out;
  out.reserve(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const Se3Pose rel = se3_compose(se3_inverse(traj.poses[i]), traj.poses[i + 1]);
    Twist xi = se3_log(rel);
    xi.linear *= traj.fps;
    xi.angular *= traj.fps;
    out.push_back(xi);
  }
  return out;
}

std::vector<Vec3> linear_velocity(std::span<const Vec3> points, double fps) {
  if (points.size() < 2) {
    throw Error(ErrorCode::kShape, "linear_velocity: need at least 2 points");
  }
  std::vector<Vec3> out;
  out.reserve(points.size() - 1);
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    out.push_back((points[i + 1] - points[i]) * fps);
  }
  return out;
}

void validate(const CameraTrajectory& traj, double rotation_tol) {
  if (traj.poses.empty() || traj.poses.size() > kMaxFrames) {
    throw Error(ErrorCode::kShape, "trajectory length must be in [1, 300], got " +
                                       std::to_string(traj.poses.size()));
  }
  if (traj.mask.size() != traj.poses.size()) {
    throw Error(ErrorCode::kShape, "mask length does not match pose count");
  }
  if (!(traj.fps > 0.0) || !std::isfinite(traj.fps)) {
    throw Error(ErrorCode::kShape, "fps must be positive");
  }
  for (std::size_t i = 0; i < traj.poses.size(); ++i) {
    if (!is_rotation(traj.poses[i].rotation, rotation_tol) ||
        !traj.poses[i].translation.allFinite()) {
      throw Error(ErrorCode::kInvalidRotation,
                  "invalid pose at frame " + std::to_string(i));
    }
  }
}

CameraTrajectory make_trajectory(std::vector<Se3Pose> poses, double fps) {
  CameraTrajectory t;
  t.fps = fps;
  t.mask.assign(poses.size(), true);
  t.poses = std::move(poses);
  return t;
}

}  // namespace cinetraj
