#include "cinetraj/align.hpp"

#include <cmath>
#include <string>

#include "cinetraj/error.hpp"

namespace cinetraj {

ScaleBias ScaleBias::compose(const ScaleBias& outer, const ScaleBias& inner) {
  ScaleBias out;
  out.s = outer.s * inner.s;
  out.b = outer.s * inner.b + outer.b;
  return out;
}

ScaleBias estimate_scale_bias(std::span<const Vec3> t_ref, std::span<const Vec3> t_next) {
  if (t_ref.size() != t_next.size() || t_ref.size() < 2) {
    throw Error(ErrorCode::kDegenerateOverlap,
                "estimate_scale_bias: need two equal-length lists of at least 2 frames");
  }
  for (std::size_t i = 0; i < t_ref.size(); ++i) {
    if (!t_ref[i].allFinite() || !t_next[i].allFinite()) {
      throw Error(ErrorCode::kInput, "estimate_scale_bias: non-finite translation");
    }
  }
  // Normal equations of the stacked system [t_next_i  I] [s; b] = t_ref_i.
  Eigen::Matrix4d ata = Eigen::Matrix4d::Zero();
  for (std::size_t i = 0; i < t_ref.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      Eigen::Vector4d row = Eigen::Vector4d::Zero();
      row(0) = t_next[i](a);
      row(1 + a) = 1.0;
      ata += row * row.transpose();
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(ata);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) {
    throw Error(ErrorCode::kDegenerateOverlap,
                "estimate_scale_bias: overlap translations do not identify the scale");
  }
  // Centered closed form of the same least-squares problem; exact when the
  // two lists are identical.
  const double n = static_cast<double>(t_ref.size());
  Vec3 mean_ref = Vec3::Zero(), mean_next = Vec3::Zero();
  for (std::size_t i = 0; i < t_ref.size(); ++i) {
    mean_ref += t_ref[i];
    mean_next += t_next[i];
  }
  mean_ref /= n;
  mean_next /= n;
  double cross = 0.0, spread = 0.0;
  for (std::size_t i = 0; i < t_ref.size(); ++i) {
    const Vec3 dn = t_next[i] - mean_next;
    cross += (t_ref[i] - mean_ref).dot(dn);
    spread += dn.squaredNorm();
  }
  ScaleBias sb;
  sb.s = cross / spread;
  sb.b = mean_ref - sb.s * mean_next;
  if (!(sb.s > 0.0)) {
    throw Error(ErrorCode::kNegativeScale,
                "estimate_scale_bias: non-positive scale " + std::to_string(sb.s));
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < t_ref.size(); ++i) {
    ss += (t_ref[i] - sb.apply(t_next[i])).squaredNorm();
  }
  sb.residual_rms = std::sqrt(ss / static_cast<double>(t_ref.size()));
  return sb;
}

Vec3 alignment_transform(const ScaleBias& sb, const Se3Pose& pose_next) {
  const Vec3& t = pose_next.translation;
  return pose_next.rotation.transpose() * (t - sb.apply(t));
}

std::vector<Vec3> align_vertices(std::span<const Vec3> vertices, const ScaleBias& sb,
                                 const Se3Pose& pose_next) {
  const Vec3 offset = alignment_transform(sb, pose_next);
  std::vector<Vec3> out;
  out.reserve(vertices.size());
  for (const Vec3& v : vertices) out.push_back(v + offset);
  return out;
}

namespace {

void check_chunk(const Chunk& c, std::size_t index, bool has_next) {
  const std::size_t n = c.cameras.size();
  const std::string where = "chunk " + std::to_string(index) + ": ";
  if (n == 0 || n > kMaxChunkFrames) {
    throw Error(ErrorCode::kShape, where + "length must be in [1, 100]");
  }
  if (c.cameras.mask.size() != n) {
    throw Error(ErrorCode::kShape, where + "mask length mismatch");
  }
  if (!c.character.hips.empty() && c.character.hips.size() != n) {
    throw Error(ErrorCode::kShape, where + "character length mismatch");
  }
  if (!c.character.vertices.empty() && c.character.vertices.size() != n) {
    throw Error(ErrorCode::kShape, where + "vertex frame count mismatch");
  }
  if (has_next && (c.overlap_len < 2 || c.overlap_len > n)) {
    throw Error(ErrorCode::kDegenerateOverlap, where + "overlap must be at least 2 frames");
  }
}

}  // namespace

AlignedShot align_chunks(std::span<const Chunk> chunks) {
  if (chunks.empty()) {
    throw Error(ErrorCode::kShape, "align_chunks: no chunks");
  }
  for (std::size_t k = 0; k < chunks.size(); ++k) {
    check_chunk(chunks[k], k, k + 1 < chunks.size());
  }
  const bool with_hips = !chunks.front().character.hips.empty();
  const bool with_vertices = !chunks.front().character.vertices.empty();
  for (std::size_t k = 1; k < chunks.size(); ++k) {
    if (chunks[k].character.hips.empty() == with_hips ||
        chunks[k].character.vertices.empty() == with_vertices) {
      throw Error(ErrorCode::kShape, "align_chunks: chunks disagree on character content");
    }
  }

  // Pairwise fits use raw coordinates of both chunks, so they are independent.
  std::vector<ScaleBias> pairwise(chunks.size());
  for (std::size_t k = 1; k < chunks.size(); ++k) {
    const Chunk& prev = chunks[k - 1];
    const Chunk& next = chunks[k];
    const std::size_t ov = prev.overlap_len;
    if (next.cameras.size() < ov) {
      throw Error(ErrorCode::kDegenerateOverlap,
                  "chunk " + std::to_string(k) + ": shorter than the overlap");
    }
    std::vector<Vec3> t_ref, t_next;
    for (std::size_t i = 0; i < ov; ++i) {
      t_ref.push_back(prev.cameras.poses[prev.cameras.size() - ov + i].translation);
      t_next.push_back(next.cameras.poses[i].translation);
    }
    try {
      pairwise[k] = estimate_scale_bias(t_ref, t_next);
    } catch (const Error& e) {
      throw Error(e.code(), "chunk " + std::to_string(k) + ": " + e.what());
    }
  }

  AlignedShot shot;
  shot.cameras.fps = chunks.front().cameras.fps;
  shot.character.fps = chunks.front().character.fps;
  shot.transforms.resize(chunks.size());
  for (std::size_t k = 0; k < chunks.size(); ++k) {
    if (k > 0) shot.transforms[k] = ScaleBias::compose(shot.transforms[k - 1], pairwise[k]);
    const ScaleBias& tf = shot.transforms[k];
    const Chunk& c = chunks[k];
    const std::size_t skip = k == 0 ? 0 : chunks[k - 1].overlap_len;
    for (std::size_t i = skip; i < c.cameras.size(); ++i) {
      const Se3Pose& raw = c.cameras.poses[i];
      if (k == 0) {
        shot.cameras.poses.push_back(raw);
      } else {
        shot.cameras.poses.push_back({raw.rotation, tf.apply(raw.translation)});
      }
      shot.cameras.mask.push_back(c.cameras.mask[i]);
      if (with_hips) {
        const Vec3 offset = k == 0 ? Vec3::Zero() : alignment_transform(tf, raw);
        shot.character.hips.push_back(c.character.hips[i] + offset);
      }
      if (with_vertices) {
        shot.character.vertices.push_back(
            k == 0 ? c.character.vertices[i] : align_vertices(c.character.vertices[i], tf, raw));
      }
    }
  }
  return shot;
}

}  // namespace cinetraj
