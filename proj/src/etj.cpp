#include "cinetraj/etj.hpp"

#include <algorithm>
#include <cmath>

#include "cinetraj/checkpoint.hpp"
#include "cinetraj/error.hpp"

namespace cinetraj {
namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::kFormat, "etj: " + what); }

double num(const json& v, const char* what) {
  if (!v.is_number()) bad(std::string(what) + " must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) bad(std::string(what) + " must be finite");
  return d;
}

std::vector<TagSegment> segments_from(const json& arr, const char* what) {
  if (!arr.is_array()) bad(std::string(what) + " tags must be an array");
  std::vector<TagSegment> out;
  for (const auto& s : arr) {
    if (!s.is_array() || s.size() != 3 || !s[0].is_number_unsigned() ||
        !s[1].is_number_unsigned() || !s[2].is_string()) {
      bad(std::string(what) + " tag entries must be [start, end, \"label\"]");
    }
    out.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>(), s[2].get<std::string>()});
  }
  return out;
}

json segments_to(const std::vector<TagSegment>& segs) {
  json a = json::array();
  for (const auto& s : segs) a.push_back(json::array({s.start, s.end, s.label}));
  return a;
}

}  // namespace

CharacterTrajectory EtjDocument::character() const {
  CharacterTrajectory c;
  c.fps = camera.fps;
  if (character_hips) c.hips = *character_hips;
  return c;
}

bool operator==(const EtjDocument& a, const EtjDocument& b) {
  if (a.camera.fps != b.camera.fps || a.camera.size() != b.camera.size()) return false;
  // An empty mask means every frame is valid.
  auto valid = [](const CameraTrajectory& t, std::size_t i) { return t.mask.empty() || t.mask[i]; };
  for (std::size_t i = 0; i < a.camera.size(); ++i) {
    if (valid(a.camera, i) != valid(b.camera, i)) return false;
  }
  for (std::size_t i = 0; i < a.camera.size(); ++i) {
    if (a.camera.poses[i].rotation != b.camera.poses[i].rotation ||
        a.camera.poses[i].translation != b.camera.poses[i].translation) {
      return false;
    }
  }
  return a.character_hips == b.character_hips && a.caption == b.caption &&
         a.caption_kind == b.caption_kind && a.camera_tags == b.camera_tags &&
         a.character_tags == b.character_tags;
}

EtjDocument etj_from_json(const json& j) {
  if (!j.is_object()) bad("document must be an object");
  if (!j.contains("version") || j["version"] != kEtjVersion) bad("unsupported or missing version");
  if (!j.contains("fps") || !j.contains("n_frames") || !j.contains("camera")) {
    bad("fps, n_frames and camera are required");
  }
  EtjDocument d;
  d.camera.fps = num(j["fps"], "fps");
  if (!(d.camera.fps > 0.0)) bad("fps must be positive");
  if (!j["n_frames"].is_number_unsigned()) bad("n_frames must be a nonnegative integer");
  const auto n = j["n_frames"].get<std::size_t>();
  if (n > kMaxFrames) bad("n_frames exceeds 300");

  const auto& cam = j["camera"];
  if (!cam.is_array() || cam.size() != n) bad("camera must hold n_frames poses");
  d.camera.poses.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = cam[i];
    if (!p.is_array() || p.size() != 12) bad("each camera pose must have 12 numbers");
    auto& pose = d.camera.poses[i];
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) pose.rotation(r, c) = num(p[r * 4 + c], "camera");
      pose.translation[r] = num(p[r * 4 + 3], "camera");
    }
    if (!is_rotation(pose.rotation, 1e-5)) bad("rotation at frame " + std::to_string(i) + " is not orthonormal");
  }
  if (j.contains("mask")) {
    const auto& m = j["mask"];
    if (!m.is_array() || m.size() != n) bad("mask must hold n_frames entries");
    for (const auto& v : m) {
      if (v != 0 && v != 1) bad("mask entries must be 0 or 1");
      d.camera.mask.push_back(v == 1);
    }
  } else {
    d.camera.mask.assign(n, true);
  }
  if (j.contains("character_hips")) {
    const auto& h = j["character_hips"];
    if (!h.is_array() || h.size() != n) bad("character_hips must hold n_frames points");
    std::vector<Vec3> hips;
    for (const auto& p : h) {
      if (!p.is_array() || p.size() != 3) bad("hip points must have 3 numbers");
      hips.emplace_back(num(p[0], "hips"), num(p[1], "hips"), num(p[2], "hips"));
    }
    d.character_hips = std::move(hips);
  }
  if (j.contains("caption")) {
    if (!j["caption"].is_string()) bad("caption must be a string");
    d.caption = j["caption"].get<std::string>();
  }
  if (j.contains("caption_kind")) {
    if (!j["caption_kind"].is_string()) bad("caption_kind must be a string");
    try {
      d.caption_kind = caption_kind_from_string(j["caption_kind"].get<std::string>());
    } catch (const Error&) {
      bad("caption_kind must be \"camera\" or \"camera-character\"");
    }
  }
  if (j.contains("tags")) {
    const auto& t = j["tags"];
    if (!t.is_object()) bad("tags must be an object");
    if (t.contains("camera")) d.camera_tags = segments_from(t["camera"], "camera");
    if (t.contains("character")) d.character_tags = segments_from(t["character"], "character");
  }
  return d;
}

json etj_to_json(const EtjDocument& d) {
  json j;
  j["version"] = kEtjVersion;
  j["fps"] = d.camera.fps;
  j["n_frames"] = d.camera.size();
  json cam = json::array();
  for (const auto& p : d.camera.poses) {
    json row = json::array();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) row.push_back(p.rotation(r, c));
      row.push_back(p.translation[r]);
    }
    cam.push_back(std::move(row));
  }
  j["camera"] = std::move(cam);
  // An all-valid mask is the default and is left out.
  if (std::find(d.camera.mask.begin(), d.camera.mask.end(), false) != d.camera.mask.end()) {
    json m = json::array();
    for (bool b : d.camera.mask) m.push_back(b ? 1 : 0);
    j["mask"] = std::move(m);
  }
  if (d.character_hips) {
    json h = json::array();
    for (const auto& p : *d.character_hips) h.push_back(json::array({p.x(), p.y(), p.z()}));
    j["character_hips"] = std::move(h);
  }
  if (d.caption) j["caption"] = *d.caption;
  if (d.caption_kind) j["caption_kind"] = std::string(to_string(*d.caption_kind));
  if (d.camera_tags || d.character_tags) {
    json t = json::object();
    if (d.camera_tags) t["camera"] = segments_to(*d.camera_tags);
    if (d.character_tags) t["character"] = segments_to(*d.character_tags);
    j["tags"] = std::move(t);
  }
  return j;
}

std::string dump_etj(const EtjDocument& doc) { return etj_to_json(doc).dump(1) + "\n"; }

EtjDocument load_etj(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, "etj: " + path.string() + ": " + e.what());
  }
  try {
    return etj_from_json(j);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void save_etj(const std::filesystem::path& path, const EtjDocument& doc) {
  write_file_atomic(path, dump_etj(doc));
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, "manifest " + path.string() + ": " + e.what());
  }
  const json* list = &j;
  if (j.is_object() && j.contains("entries")) list = &j["entries"];
  if (!list->is_array()) throw Error(ErrorCode::kFormat, "manifest must be a list of entries");
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  for (const auto& e : *list) {
    if (!e.is_object() || !e.contains("path") || !e["path"].is_string()) {
      throw Error(ErrorCode::kFormat, "manifest entry needs a \"path\" string");
    }
    ManifestEntry m;
    m.path = e["path"].get<std::string>();
    if (m.path.is_relative()) m.path = base / m.path;
    if (e.contains("split")) {
      if (e["split"] != "train" && e["split"] != "val") {
        throw Error(ErrorCode::kFormat, "manifest split must be train or val");
      }
      m.split = e["split"].get<std::string>();
    }
    if (e.contains("overlap_len")) {
      if (!e["overlap_len"].is_number_unsigned()) {
        throw Error(ErrorCode::kFormat, "manifest overlap_len must be a nonnegative integer");
      }
      m.overlap_len = e["overlap_len"].get<std::size_t>();
    }
    if (!std::filesystem::exists(m.path)) {
      throw Error(ErrorCode::kFormat, "manifest entry does not exist: " + m.path.string());
    }
    out.push_back(std::move(m));
  }
  return out;
}

void save_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  const auto base = path.parent_path();
  json list = json::array();
  for (const auto& e : entries) {
    json o;
    auto rel = e.path.lexically_relative(base.empty() ? std::filesystem::path(".") : base);
    o["path"] = (rel.empty() || rel.native().starts_with("..")) ? e.path.string() : rel.string();
    o["split"] = e.split;
    if (e.overlap_len) o["overlap_len"] = *e.overlap_len;
    list.push_back(std::move(o));
  }
  write_file_atomic(path, list.dump(1) + "\n");
}

}  // namespace cinetraj
