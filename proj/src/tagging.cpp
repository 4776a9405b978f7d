#include "cinetraj/tagging.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cinetraj/error.hpp"

namespace cinetraj {
namespace {

constexpr std::array<std::string_view, 6> kCameraTerms = {
    "truck left", "truck right", "boom bottom", "boom top", "push-in", "pull-out"};
constexpr std::array<std::string_view, 6> kCharacterTerms = {
    "move left", "move right", "move down", "move up", "move forward", "move backward"};

int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

std::vector<Vec3> extend_last(std::vector<Vec3> v) {
  v.push_back(v.back());
  return v;
}

}  // namespace

int state_index(const AxisState& s) { return (s[0] + 1) * 9 + (s[1] + 1) * 3 + (s[2] + 1); }

AxisState state_from_index(int index) {
  return {index / 9 - 1, (index / 3) % 3 - 1, index % 3 - 1};
}

void TagConfig::validate() const {
  if (!(static_thresh_lin > 0.0) || !(dominance_ratio > 0.0) || dominance_ratio > 1.0 ||
      smooth_window == 0 || min_segment_len == 0) {
    throw Error(ErrorCode::kConfig, "tag config: values must be positive, dominance_ratio <= 1");
  }
}

const std::array<std::string_view, 6>& directional_terms(Vocab vocab) {
  return vocab == Vocab::kCamera ? kCameraTerms : kCharacterTerms;
}

std::string label_for(const AxisState& s, Vocab vocab) {
  if (s.is_static()) return "static";
  const auto& terms = directional_terms(vocab);
  std::string out;
  for (int a = 0; a < 3; ++a) {
    if (s[a] == 0) continue;
    if (!out.empty()) out += '-';
    out += terms[2 * a + (s[a] > 0 ? 1 : 0)];
  }
  return out;
}

AxisState state_for(std::string_view label, Vocab vocab) {
  for (int i = 0; i < 27; ++i) {
    const AxisState s = state_from_index(i);
    if (label_for(s, vocab) == label) return s;
  }
  throw Error(ErrorCode::kFormat, "unknown motion label '" + std::string(label) + "'");
}

std::vector<AxisState> axis_states(std::span<const Vec3> velocities, const TagConfig& cfg) {
  cfg.validate();
  std::vector<AxisState> out;
  out.reserve(velocities.size());
  for (const Vec3& v : velocities) {
    std::array<bool, 3> moving{};
    for (int a = 0; a < 3; ++a) moving[a] = std::abs(v(a)) > cfg.static_thresh_lin;
    AxisState s;
    for (int a = 0; a < 3; ++a) {
      if (!moving[a]) continue;
      bool outmatched = false;
      for (int b = 0; b < 3; ++b) {
        if (b != a && moving[b] && std::abs(v(a)) / std::abs(v(b)) < cfg.dominance_ratio) {
          outmatched = true;
        }
      }
      if (!outmatched) s[a] = sign_of(v(a));
    }
    out.push_back(s);
  }
  return out;
}

std::vector<AxisState> camera_frame_tags(const CameraTrajectory& traj, const TagConfig& cfg) {
  const auto twists = body_velocity(traj);
  std::vector<Vec3> lin;
  lin.reserve(twists.size());
  for (const Twist& t : twists) lin.push_back(t.linear);
  return axis_states(extend_last(std::move(lin)), cfg);
}

std::vector<AxisState> character_frame_tags(const CharacterTrajectory& traj, const TagConfig& cfg,
                                             const Mat3& reference) {
  auto vel = linear_velocity(traj.hips, traj.fps);
  const Vec3 up(0.0, 1.0, 0.0);
  Vec3 forward = -reference.col(2);
  forward.y() = 0.0;
  Vec3 right;
  if (forward.norm() > 1e-9) {
    forward.normalize();
    right = forward.cross(up);
  } else {
    // Camera looking straight up or down: heading from the body x axis.
    right = reference.col(0);
    right.y() = 0.0;
    right.normalize();
    forward = up.cross(right);
  }
  for (Vec3& v : vel) v = Vec3(v.dot(right), v.dot(up), -v.dot(forward));
  return axis_states(extend_last(std::move(vel)), cfg);
}

std::vector<AxisState> smooth_tags(std::span<const AxisState> states, const TagConfig& cfg) {
  cfg.validate();
  const std::size_t n = states.size();
  const std::size_t half = cfg.smooth_window / 2;
  std::vector<AxisState> out(n);
  for (int a = 0; a < 3; ++a) {
    // Prefix sums of +1 and -1 votes.
    std::vector<long> pos(n + 1, 0), neg(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
      pos[i + 1] = pos[i] + (states[i][a] > 0);
      neg[i + 1] = neg[i] + (states[i][a] < 0);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t lo = i >= half ? i - half : 0;
      const std::size_t hi = std::min(n, i + half + 1);
      const long len = static_cast<long>(hi - lo);
      const long net = (pos[hi] - pos[lo]) - (neg[hi] - neg[lo]);
      if (2 * net > len) {
        out[i][a] = 1;
      } else if (-2 * net > len) {
        out[i][a] = -1;
      }
    }
  }
  return out;
}

std::vector<TagSegment> segment_tags(std::span<const AxisState> states, Vocab vocab,
                                     const TagConfig& cfg) {
  cfg.validate();
  struct Run {
    std::size_t start, end;
    AxisState s;
    std::size_t len() const { return end - start + 1; }
  };
  std::vector<Run> runs;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (!runs.empty() && runs.back().s == states[i]) {
      runs.back().end = i;
    } else {
      runs.push_back({i, i, states[i]});
    }
  }
  while (runs.size() > 1) {
    std::size_t shortest = 0;
    for (std::size_t i = 1; i < runs.size(); ++i) {
      if (runs[i].len() < runs[shortest].len()) shortest = i;
    }
    if (runs[shortest].len() >= cfg.min_segment_len) break;
    std::size_t target;
    if (shortest == 0) {
      target = 1;
    } else if (shortest + 1 == runs.size()) {
      target = shortest - 1;
    } else {
      target = runs[shortest - 1].len() >= runs[shortest + 1].len() ? shortest - 1 : shortest + 1;
    }
    runs[target].start = std::min(runs[target].start, runs[shortest].start);
    runs[target].end = std::max(runs[target].end, runs[shortest].end);
    runs.erase(runs.begin() + static_cast<long>(shortest));
    // Coalesce neighbours that now carry the same state.
    std::vector<Run> merged;
    for (const Run& r : runs) {
      if (!merged.empty() && merged.back().s == r.s) {
        merged.back().end = r.end;
      } else {
        merged.push_back(r);
      }
    }
    runs = std::move(merged);
  }
  std::vector<TagSegment> out;
  for (const Run& r : runs) out.push_back({r.start, r.end, label_for(r.s, vocab)});
  return out;
}

std::vector<TagSegment> tag_camera(const CameraTrajectory& traj, const TagConfig& cfg) {
  const auto frames = camera_frame_tags(traj, cfg);
  return segment_tags(smooth_tags(frames, cfg), Vocab::kCamera, cfg);
}

std::vector<TagSegment> tag_character(const CharacterTrajectory& traj, const TagConfig& cfg,
                                      const Mat3& reference) {
  const auto frames = character_frame_tags(traj, cfg, reference);
  return segment_tags(smooth_tags(frames, cfg), Vocab::kCharacter, cfg);
}

int select_main_character(std::span<const Track> tracks, double frame_area,
                           std::size_t total_frames) {
  if (tracks.empty()) {
    throw Error(ErrorCode::kNoCharacter, "select_main_character: no tracks");
  }
  if (!(frame_area > 0.0)) {
    throw Error(ErrorCode::kInput, "select_main_character: frame area must be positive");
  }
  if (total_frames == 0) {
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const Track& t : tracks) {
      for (const Box& b : t.boxes) {
        lo = std::min(lo, b.frame);
        hi = std::max(hi, b.frame);
      }
    }
    total_frames = lo == SIZE_MAX ? 1 : hi - lo + 1;
  }
  int best_id = 0;
  double best_score = -1.0;
  for (const Track& t : tracks) {
    double area = 0.0;
    std::set<std::size_t> frames;
    for (const Box& b : t.boxes) {
      area += b.w * b.h;
      frames.insert(b.frame);
    }
    const double mean_area = t.boxes.empty() ? 0.0 : area / static_cast<double>(t.boxes.size());
    const double score = (mean_area / frame_area) *
                         (static_cast<double>(frames.size()) / static_cast<double>(total_frames));
    if (score > best_score || (score == best_score && t.id < best_id)) {
      best_score = score;
      best_id = t.id;
    }
  }
  return best_id;
}

}  // namespace cinetraj
