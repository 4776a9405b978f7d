#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "cinetraj/error.hpp"
#include "cinetraj/etj.hpp"
#include "cinetraj/synth.hpp"
#include "cinetraj/tagging.hpp"

using namespace cinetraj;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cinetraj_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Synth, StaticTagKeepsPosesIdentical) {
  SynthSpec spec;
  std::mt19937_64 rng(1);
  auto s = gen_pure(AxisState{}, spec, rng);
  ASSERT_EQ(s.camera.size(), spec.frames);
  for (const auto& p : s.camera.poses) {
    EXPECT_EQ(p.translation, s.camera.poses[0].translation);
    EXPECT_EQ(p.rotation, s.camera.poses[0].rotation);
  }
}

TEST(Synth, TruckDisplacement) {
  SynthSpec spec;  // 100 frames, 25 fps, 1.67 m/s
  std::mt19937_64 rng(1);
  auto s = gen_pure(AxisState(1, 0, 0), spec, rng);
  const Vec3 d = s.camera.poses.back().translation - s.camera.poses.front().translation;
  EXPECT_NEAR(d.x(), 1.67 * 99.0 / 25.0, 1e-12);
  EXPECT_NEAR(d.y(), 0.0, 1e-12);
  EXPECT_NEAR(d.z(), 0.0, 1e-12);
}

TEST(Synth, TaggingOracleAll27States) {
  SynthSpec spec;
  spec.frames = 120;
  TagConfig cfg;
  for (const auto& tag : all_motions()) {
    std::mt19937_64 rng(7);
    auto s = gen_pure(tag, spec, rng);
    const auto raw = camera_frame_tags(s.camera, cfg);
    const auto smooth = smooth_tags(raw, cfg);
    for (std::size_t i = 0; i < smooth.size(); ++i) {
      ASSERT_EQ(smooth[i], tag) << label_for(tag, Vocab::kCamera) << " frame " << i;
    }
    const auto segs = tag_camera(s.camera, cfg);
    ASSERT_EQ(segs.size(), 1u);
    EXPECT_EQ(segs[0], s.camera_segments[0]);
    // The character is tagged against the (identity) camera heading.
    EXPECT_EQ(tag_character(s.character, cfg), s.character_segments);
  }
}

TEST(Synth, MixedBoomThenStatic) {
  SynthSpec spec;
  spec.frames = 210;
  std::mt19937_64 rng(3);
  const std::vector<MotionPiece> pieces{{AxisState(0, 1, 0), 155}, {AxisState{}, 55}};
  auto s = gen_mixed(pieces, spec, rng);
  ASSERT_EQ(s.camera_segments.size(), 2u);
  EXPECT_EQ(s.camera_segments[0], (TagSegment{0, 154, "boom top"}));
  EXPECT_EQ(s.camera_segments[1], (TagSegment{155, 209, "static"}));
  // C0 continuity: no jump larger than one step at the join.
  const double step = spec.speed / spec.fps;
  for (std::size_t i = 1; i < s.camera.size(); ++i) {
    EXPECT_LE((s.camera.poses[i].translation - s.camera.poses[i - 1].translation).norm(), step + 1e-12);
  }
  const auto got = tag_camera(s.camera, TagConfig{});
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].label, "boom top");
  EXPECT_EQ(got[1].label, "static");
  EXPECT_LE(std::abs(static_cast<long>(got[1].start) - 155), 13);
}

TEST(Synth, MixedBoundariesWithinHalfWindow) {
  SynthSpec spec;
  spec.frames = 200;
  const auto menu = all_motions();
  std::mt19937_64 pick(11);
  std::uniform_int_distribution<int> idx(0, 26), cut(40, 160);
  for (int trial = 0; trial < 200; ++trial) {
    AxisState a = menu[idx(pick)], b = menu[idx(pick)];
    if (a == b) continue;
    const std::size_t n1 = cut(pick);
    const std::vector<MotionPiece> pieces{{a, n1}, {b, spec.frames - n1}};
    std::mt19937_64 rng(trial);
    auto s = gen_mixed(pieces, spec, rng);
    const auto got = tag_camera(s.camera, TagConfig{});
    ASSERT_EQ(got.size(), 2u) << label_for(a, Vocab::kCamera) << " | " << label_for(b, Vocab::kCamera);
    EXPECT_EQ(got[0].label, label_for(a, Vocab::kCamera));
    EXPECT_EQ(got[1].label, label_for(b, Vocab::kCamera));
    EXPECT_LE(std::abs(static_cast<long>(got[1].start) - static_cast<long>(n1)), 13);
  }
}

TEST(Synth, SingleMixedPieceEqualsPure) {
  SynthSpec spec;
  spec.noise_sigma = 0.02;
  std::mt19937_64 r1(5), r2(5);
  const MotionPiece piece{AxisState(1, -1, 0), spec.frames};
  auto a = gen_pure(piece.tag, spec, r1);
  auto b = gen_mixed(std::span(&piece, 1), spec, r2);
  EXPECT_EQ(to_etj(a), to_etj(b));
}

TEST(Synth, DurationMismatchIsConfigError) {
  SynthSpec spec;
  std::mt19937_64 rng(0);
  const std::vector<MotionPiece> pieces{{AxisState(1, 0, 0), 30}, {AxisState{}, 30}};
  try {
    gen_mixed(pieces, spec, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

TEST(Synth, SpecValidation) {
  SynthSpec s;
  s.frames = 301;
  EXPECT_THROW(s.validate(), Error);
  s = {};
  s.speed = 0;
  EXPECT_THROW(s.validate(), Error);
  s = {};
  s.motion_menu.clear();
  EXPECT_THROW(s.validate(), Error);
  auto j = nlohmann::json::parse(R"({"n_samples": 4, "motion_menu": ["truck left", [0, 1, 1]]})");
  auto p = synth_spec_from_json(j);
  EXPECT_EQ(p.motion_menu.size(), 2u);
  EXPECT_EQ(p.motion_menu[0], AxisState(-1, 0, 0));
  EXPECT_EQ(p.motion_menu[1], AxisState(0, 1, 1));
  EXPECT_THROW(synth_spec_from_json(nlohmann::json::parse(R"({"motion_menu": [[2, 0, 0]]})")), Error);
}

TEST(Synth, BalancedHistogram) {
  SynthSpec spec;
  spec.n_samples = 50;
  const auto samples = gen_samples(spec);
  std::map<std::string, int> hist;
  for (const auto& s : samples) hist[s.camera_segments[0].label]++;
  ASSERT_EQ(hist.size(), 6u);
  int lo = 1 << 30, hi = 0;
  for (const auto& [k, v] : hist) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_LE(hi - lo, 1);
}

TEST(Synth, FollowCharacterCopiesCameraTag) {
  SynthSpec spec;
  spec.follow_character = true;
  std::mt19937_64 rng(0);
  auto s = gen_pure(AxisState(0, 0, -1), spec, rng);
  EXPECT_EQ(s.character_segments[0].label, label_for(AxisState(0, 0, -1), Vocab::kCharacter));
}

TEST(Synth, DatasetIsByteDeterministic) {
  SynthSpec spec;
  spec.n_samples = 10;
  spec.noise_sigma = 0.01;
  spec.val_fraction = 0.2;
  spec.seed = 42;
  const auto d1 = scratch("synth_a"), d2 = scratch("synth_b");
  const auto e1 = gen_dataset(spec, d1);
  gen_dataset(spec, d2);
  ASSERT_EQ(e1.size(), 10u);
  EXPECT_EQ(e1[7].split, "train");
  EXPECT_EQ(e1[8].split, "val");
  for (const auto& entry : fs::directory_iterator(d1)) {
    const auto name = entry.path().filename();
    EXPECT_EQ(slurp(entry.path()), slurp(d2 / name)) << name;
  }
  const auto loaded = load_manifest(d1 / "manifest.json");
  ASSERT_EQ(loaded.size(), 10u);
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    EXPECT_EQ(fs::canonical(loaded[i].path), fs::canonical(e1[i].path));
    EXPECT_EQ(loaded[i].split, e1[i].split);
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Etj, RoundTripIsIdentity) {
  SynthSpec spec;
  spec.n_samples = 6;
  spec.noise_sigma = 0.05;
  const auto dir = scratch("etj_rt");
  fs::create_directories(dir);
  std::mt19937_64 rr(9);
  std::normal_distribution<double> g;
  for (const auto& s : gen_samples(spec)) {
    EtjDocument doc = to_etj(s);
    // Random rotations exercise full-precision number output.
    for (auto& p : doc.camera.poses) p.rotation = Eigen::Quaterniond(g(rr), g(rr), g(rr), g(rr)).normalized().toRotationMatrix();
    doc.camera.mask.assign(doc.camera.size(), true);
    doc.camera.mask[3] = false;
    const auto path = dir / "x.etj";
    save_etj(path, doc);
    const auto back = load_etj(path);
    EXPECT_EQ(back, doc);
    for (std::size_t i = 0; i < doc.camera.size(); ++i) {
      ASSERT_EQ(back.camera.poses[i].translation, doc.camera.poses[i].translation);
      ASSERT_EQ(back.camera.poses[i].rotation, doc.camera.poses[i].rotation);
    }
    const std::string first = slurp(path);
    save_etj(path, back);
    EXPECT_EQ(slurp(path), first);
  }
  fs::remove_all(dir);
}

TEST(Etj, MinimalDocumentAndErrors) {
  auto j = nlohmann::json::parse(R"({"version": 1, "fps": 25, "n_frames": 1, "camera": [[1,0,0,0, 0,1,0,0, 0,0,1,0]]})");
  const auto doc = etj_from_json(j);
  EXPECT_EQ(doc.camera.size(), 1u);
  EXPECT_FALSE(doc.character_hips.has_value());
  EXPECT_EQ(etj_from_json(etj_to_json(doc)), doc);

  auto expect_format = [](const char* text) {
    try {
      etj_from_json(nlohmann::json::parse(text));
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kFormat) << text;
    }
  };
  expect_format(R"({"version": 1, "fps": 25, "n_frames": 1, "camera": [[2,0,0,0, 0,1,0,0, 0,0,1,0]]})");
  expect_format(R"({"version": 1, "fps": 25, "n_frames": 1, "camera": [[1,0,0,0, 0,1,0,0]]})");
  expect_format(R"({"version": 1, "fps": -1, "n_frames": 1, "camera": [[1,0,0,0, 0,1,0,0, 0,0,1,0]]})");
  expect_format(R"({"fps": 25})");
  expect_format(R"([1, 2])");
}

TEST(Etj, ManifestErrors) {
  const auto dir = scratch("manifest");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "m.json") << R"([{"path": "missing.etj"}])";
  }
  try {
    load_manifest(dir / "m.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormat);
    EXPECT_NE(std::string(e.what()).find("missing.etj"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Etj, FrameCountMismatchRejected) {
  try {
    etj_from_json(nlohmann::json::parse(
        R"({"version": 1, "fps": 25, "n_frames": 2, "camera": [[1,0,0,0, 0,1,0,0, 0,0,1,0]]})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormat);
  }
}
