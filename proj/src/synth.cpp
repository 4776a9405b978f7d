#include "cinetraj/synth.hpp"

#include <cmath>
#include <cstdio>

#include "cinetraj/error.hpp"

namespace cinetraj {
namespace {

Vec3 direction(const AxisState& s) {
  Vec3 d(s[0], s[1], s[2]);
  const double n = d.norm();
  return n > 0.0 ? Vec3(d / n) : Vec3::Zero();
}

}  // namespace

std::vector<AxisState> pure_motions() {
  return {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
}

std::vector<AxisState> all_motions() {
  std::vector<AxisState> v;
  for (int i = 0; i < 27; ++i) v.push_back(state_from_index(i));
  return v;
}

void SynthSpec::validate() const {
  if (n_samples == 0 || frames < 2 || frames > kMaxFrames) {
    throw Error(ErrorCode::kConfig, "synth: need n_samples > 0 and 2 <= frames <= 300");
  }
  if (!(fps > 0.0) || !(speed > 0.0) || !(noise_sigma >= 0.0)) {
    throw Error(ErrorCode::kConfig, "synth: fps and speed must be positive, noise nonnegative");
  }
  if (motion_menu.empty()) throw Error(ErrorCode::kConfig, "synth: empty motion menu");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw Error(ErrorCode::kConfig, "synth: val_fraction must be in [0, 1)");
  }
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  auto menu = [](const nlohmann::json& a) {
    std::vector<AxisState> m;
    for (const auto& e : a) {
      if (e.is_string()) {
        m.push_back(state_for(e.get<std::string>(), Vocab::kCamera));
      } else {
        const auto v = e.get<std::array<int, 3>>();
        for (int x : v) {
          if (x < -1 || x > 1) throw Error(ErrorCode::kConfig, "synth: axis values must be -1, 0 or 1");
        }
        m.emplace_back(v[0], v[1], v[2]);
      }
    }
    return m;
  };
  try {
    if (!j.is_object()) throw Error(ErrorCode::kConfig, "synth spec must be an object");
    s.n_samples = j.value("n_samples", s.n_samples);
    s.frames = j.value("frames", s.frames);
    s.fps = j.value("fps", s.fps);
    s.speed = j.value("speed", s.speed);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.val_fraction = j.value("val_fraction", s.val_fraction);
    s.seed = j.value("seed", s.seed);
    s.follow_character = j.value("follow_character", s.follow_character);
    if (j.contains("motion_menu")) {
      const auto& m = j["motion_menu"];
      if (m.is_string() && m == "all") {
        s.motion_menu = all_motions();
      } else if (m.is_string() && m == "pure") {
        s.motion_menu = pure_motions();
      } else {
        s.motion_menu = menu(m);
      }
    }
    if (j.contains("character_menu")) s.character_menu = menu(j["character_menu"]);
    if (j.contains("caption_kind")) {
      s.caption_kind = caption_kind_from_string(j["caption_kind"].get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

SynthSample gen_mixed(std::span<const MotionPiece> pieces, const SynthSpec& spec,
                      std::mt19937_64& rng) {
  spec.validate();
  std::size_t total = 0;
  for (const auto& p : pieces) {
    if (p.frames == 0) throw Error(ErrorCode::kConfig, "synth: empty motion piece");
    total += p.frames;
  }
  if (pieces.empty() || total != spec.frames) {
    throw Error(ErrorCode::kConfig, "synth: piece durations sum to " + std::to_string(total) +
                                        ", expected " + std::to_string(spec.frames));
  }

  std::vector<AxisState> char_menu = spec.character_menu;
  if (char_menu.empty()) {
    char_menu = spec.motion_menu;
    char_menu.insert(char_menu.begin(), AxisState{});
  }
  std::uniform_int_distribution<std::size_t> pick(0, char_menu.size() - 1);
  AxisState char_tag = char_menu[pick(rng)];
  if (spec.follow_character) char_tag = pieces.front().tag;

  const double step = spec.speed / spec.fps;
  SynthSample s;
  s.camera.fps = spec.fps;
  s.character.fps = spec.fps;
  Vec3 pos = Vec3::Zero();
  std::size_t frame = 0;
  for (const auto& p : pieces) {
    const Vec3 dir = direction(p.tag);
    for (std::size_t k = 0; k < p.frames; ++k, ++frame) {
      // Velocity of a piece applies from its first frame to the next one,
      // so the position is continuous across joins.
      if (frame > 0) pos += dir * step;
      Se3Pose pose;
      pose.translation = pos;
      s.camera.poses.push_back(pose);
    }
    const std::string label = label_for(p.tag, Vocab::kCamera);
    if (!s.camera_segments.empty() && s.camera_segments.back().label == label) {
      s.camera_segments.back().end = frame - 1;
    } else {
      s.camera_segments.push_back({frame - p.frames, frame - 1, label});
    }
  }
  const Vec3 cdir = direction(char_tag);
  for (std::size_t i = 0; i < spec.frames; ++i) {
    s.character.hips.push_back(kCharacterStart + cdir * step * static_cast<double>(i));
  }
  s.character_segments.push_back({0, spec.frames - 1, label_for(char_tag, Vocab::kCharacter)});

  if (spec.noise_sigma > 0.0) {
    std::normal_distribution<double> g(0.0, spec.noise_sigma);
    for (auto& p : s.camera.poses) {
      for (int k = 0; k < 3; ++k) p.translation[k] += g(rng);
    }
    for (auto& h : s.character.hips) {
      for (int k = 0; k < 3; ++k) h[k] += g(rng);
    }
  }
  s.caption = rule_based_caption(s.camera_segments, s.character_segments, spec.caption_kind);
  return s;
}

SynthSample gen_pure(const AxisState& tag, const SynthSpec& spec, std::mt19937_64& rng) {
  const MotionPiece piece{tag, spec.frames};
  return gen_mixed(std::span(&piece, 1), spec, rng);
}

std::vector<SynthSample> gen_samples(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<SynthSample> out;
  out.reserve(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    out.push_back(gen_pure(spec.motion_menu[i % spec.motion_menu.size()], spec, rng));
  }
  return out;
}

EtjDocument to_etj(const SynthSample& s) {
  EtjDocument d;
  d.camera = s.camera;
  d.character_hips = s.character.hips;
  d.caption = s.caption.text;
  d.caption_kind = s.caption.kind;
  d.camera_tags = s.camera_segments;
  d.character_tags = s.character_segments;
  return d;
}

std::vector<ManifestEntry> gen_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  const auto samples = gen_samples(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + out_dir.string() + ": " + ec.message());
  const auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * samples.size()));
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05zu.etj", i);
    ManifestEntry e;
    e.path = out_dir / name;
    e.split = i + n_val >= samples.size() ? "val" : "train";
    save_etj(e.path, to_etj(samples[i]));
    entries.push_back(std::move(e));
  }
  save_manifest(out_dir / "manifest.json", entries);
  return entries;
}

}  // namespace cinetraj
