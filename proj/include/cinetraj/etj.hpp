#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cinetraj/caption.hpp"
#include "cinetraj/geom.hpp"
#include "cinetraj/tagging.hpp"

namespace cinetraj {

/// In-memory form of the JSON trajectory interchange file.
struct EtjDocument {
  CameraTrajectory camera;  // fps and mask live here
  std::optional<std::vector<Vec3>> character_hips;
  std::optional<std::string> caption;
  std::optional<CaptionKind> caption_kind;
  std::optional<std::vector<TagSegment>> camera_tags;
  std::optional<std::vector<TagSegment>> character_tags;

  CharacterTrajectory character() const;
  friend bool operator==(const EtjDocument&, const EtjDocument&);
};

inline constexpr int kEtjVersion = 1;

/// Throws Error(kFormat) on schema violations, including rotations that are
/// not orthonormal within 1e-5.
EtjDocument etj_from_json(const nlohmann::json& j);
nlohmann::json etj_to_json(const EtjDocument& doc);

EtjDocument load_etj(const std::filesystem::path& path);
/// Written through a temp file and renamed into place.
void save_etj(const std::filesystem::path& path, const EtjDocument& doc);
std::string dump_etj(const EtjDocument& doc);

struct ManifestEntry {
  std::filesystem::path path;  // resolved against the manifest's directory
  std::string split = "train";
  std::optional<std::size_t> overlap_len;
};

/// Accepts either a bare list or {"entries": [...]}. Every path must exist.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
/// Paths are stored relative to the manifest's directory when possible.
void save_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

}  // namespace cinetraj
