#include <gtest/gtest.h>

#include <random>
#include <set>

#include "cinetraj/error.hpp"
#include "cinetraj/tagging.hpp"

using namespace cinetraj;

namespace {

CameraTrajectory moving_camera(const Mat3& rot, const Vec3& world_vel, std::size_t n = 60) {
  std::vector<Se3Pose> poses(n);
  for (std::size_t i = 0; i < n; ++i) {
    poses[i].rotation = rot;
    poses[i].translation = world_vel * (static_cast<double>(i) / 25.0);
  }
  return make_trajectory(std::move(poses), 25);
}

std::vector<AxisState> repeat(const AxisState& s, std::size_t n) { return std::vector<AxisState>(n, s); }

}  // namespace

TEST(AxisStates, TwoStageRule) {
  const TagConfig cfg;
  const std::vector<Vec3> v{Vec3::Zero(), Vec3(1.0, 0.02, 0.01), Vec3(1.0, 0.95, 0.3), Vec3(-0.5, 0, -0.5)};
  const auto s = axis_states(v, cfg);
  EXPECT_EQ(s[0], AxisState(0, 0, 0));
  EXPECT_EQ(s[1], AxisState(1, 0, 0));
  EXPECT_EQ(s[2], AxisState(1, 1, 0));
  EXPECT_EQ(s[3], AxisState(-1, 0, -1));
}

TEST(AxisStates, ScaleInvariantAboveThreshold) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3, 3);
  const TagConfig cfg;
  for (int i = 0; i < 2000; ++i) {
    Vec3 v(u(rng), u(rng), u(rng));
    for (int a = 0; a < 3; ++a) {
      if (std::abs(v[a]) <= cfg.static_thresh_lin) v[a] = std::copysign(0.2, v[a]);
    }
    const std::vector<Vec3> one{v};
    for (double lambda : {1.0, 1.5, 10.0, 1e3}) {
      const std::vector<Vec3> scaled{v * lambda};
      EXPECT_EQ(axis_states(scaled, cfg)[0], axis_states(one, cfg)[0]);
    }
  }
}

TEST(Labels, Exactly27Closure) {
  for (Vocab vocab : {Vocab::kCamera, Vocab::kCharacter}) {
    std::set<std::string> seen;
    for (int i = 0; i < 27; ++i) {
      const AxisState s = state_from_index(i);
      EXPECT_EQ(state_index(s), i);
      const std::string l = label_for(s, vocab);
      EXPECT_TRUE(seen.insert(l).second) << l;
      EXPECT_EQ(state_for(l, vocab), s);
    }
    EXPECT_EQ(seen.size(), 27u);
  }
  EXPECT_EQ(label_for(AxisState(1, 0, -1), Vocab::kCamera), "truck right-push-in");
  EXPECT_EQ(label_for(AxisState{}, Vocab::kCamera), "static");
  EXPECT_THROW(state_for("barrel roll", Vocab::kCamera), Error);
}

TEST(CameraTags, BodyFrameDistinguishesTruckFromPush) {
  const TagConfig cfg;
  // Looking along world -z and moving along -z: push-in.
  for (const auto& s : camera_frame_tags(moving_camera(Mat3::Identity(), Vec3(0, 0, -1.67)), cfg)) {
    EXPECT_EQ(s, AxisState(0, 0, -1));
  }
  // Facing world +x (body -z maps to +x) while moving along +x: push-in, not truck.
  const Mat3 face_x = Eigen::AngleAxisd(-M_PI / 2, Vec3::UnitY()).toRotationMatrix();
  ASSERT_LE((face_x * Vec3(0, 0, -1) - Vec3(1, 0, 0)).norm(), 1e-12);
  for (const auto& s : camera_frame_tags(moving_camera(face_x, Vec3(1.67, 0, 0)), cfg)) {
    EXPECT_EQ(s, AxisState(0, 0, -1));
  }
  // Facing -z while moving along +x: truck right.
  const auto segs = tag_camera(moving_camera(Mat3::Identity(), Vec3(1.67, 0, 0)), cfg);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].label, "truck right");
}

TEST(CharacterTags, Construction) {
  const TagConfig cfg;
  CharacterTrajectory c;
  c.hips.assign(40, Vec3(0, 1, -3));
  for (const auto& s : character_frame_tags(c, cfg)) EXPECT_EQ(s, AxisState{});
  for (std::size_t i = 0; i < 40; ++i) c.hips[i] = Vec3(0, 1, -3) + Vec3(1, 0, 0) * (i / 25.0);
  for (const auto& s : character_frame_tags(c, cfg)) EXPECT_EQ(s, AxisState(1, 0, 0));
  EXPECT_EQ(tag_character(c, cfg)[0].label, "move right");
  for (std::size_t i = 0; i < 40; ++i) c.hips[i] = Vec3(0, 1, -3) + Vec3(0, 1, 0) * (i / 25.0);
  for (const auto& s : character_frame_tags(c, cfg)) EXPECT_EQ(s, AxisState(0, 1, 0));
  // The reference heading ignores camera pitch: a camera tilted down still
  // sees vertical motion as up.
  const Mat3 pitched = Eigen::AngleAxisd(-0.4, Vec3::UnitX()).toRotationMatrix();
  for (const auto& s : character_frame_tags(c, cfg, pitched)) EXPECT_EQ(s, AxisState(0, 1, 0));
}

TEST(Smoothing, MajorityOracle) {
  TagConfig cfg;
  auto s = repeat(AxisState(1, 0, 0), 100);
  EXPECT_EQ(smooth_tags(s, cfg), s);
  s[10] = s[50] = s[90] = AxisState{};
  EXPECT_EQ(smooth_tags(s, cfg), repeat(AxisState(1, 0, 0), 100));
  std::vector<AxisState> alt;
  for (int i = 0; i < 100; ++i) alt.emplace_back(i % 2 ? 1 : -1, 0, 0);
  EXPECT_EQ(smooth_tags(alt, cfg), repeat(AxisState{}, 100));
}

TEST(Segments, ExamplesAndCoverage) {
  TagConfig cfg;
  const auto st = segment_tags(repeat(AxisState{}, 80), Vocab::kCamera, cfg);
  ASSERT_EQ(st.size(), 1u);
  EXPECT_EQ(st[0], (TagSegment{0, 79, "static"}));

  auto boom = repeat(AxisState(0, 1, 0), 155);
  const auto rest = repeat(AxisState{}, 55);
  boom.insert(boom.end(), rest.begin(), rest.end());
  const auto segs = segment_tags(boom, Vocab::kCamera, cfg);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[0], (TagSegment{0, 154, "boom top"}));
  EXPECT_EQ(segs[1], (TagSegment{155, 209, "static"}));

  // Random state sequences: segments are ordered and cover every frame.
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> idx(0, 26), len(1, 40);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<AxisState> s;
    while (s.size() < 200) {
      const auto piece = repeat(state_from_index(idx(rng)), len(rng));
      s.insert(s.end(), piece.begin(), piece.end());
    }
    const auto out = segment_tags(s, Vocab::kCamera, cfg);
    ASSERT_FALSE(out.empty());
    EXPECT_EQ(out.front().start, 0u);
    EXPECT_EQ(out.back().end, s.size() - 1);
    for (std::size_t i = 0; i < out.size(); ++i) {
      EXPECT_LE(out[i].start, out[i].end);
      if (i) EXPECT_EQ(out[i].start, out[i - 1].end + 1);
    }
  }
}

TEST(MainCharacter, HitchcockScore) {
  auto track = [](int id, double area, std::size_t first, std::size_t count) {
    Track t{id, {}};
    for (std::size_t f = first; f < first + count; ++f) t.boxes.push_back({f, 0, 0, area, 1});
    return t;
  };
  const std::vector<Track> one{track(7, 10, 0, 5)};
  EXPECT_EQ(select_main_character(one, 100, 10), 7);
  const std::vector<Track> ab{track(1, 40, 0, 100), track(2, 60, 0, 50)};
  EXPECT_EQ(select_main_character(ab, 100, 100), 1);
  const std::vector<Track> tie{track(5, 30, 0, 10), track(3, 30, 0, 10)};
  EXPECT_EQ(select_main_character(tie, 100, 10), 3);
  try {
    select_main_character({}, 100, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoCharacter);
  }
}
