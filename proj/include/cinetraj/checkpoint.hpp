#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "cinetraj/nn/params.hpp"

namespace cinetraj {

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// failed write never leaves a partial file behind.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

/// Binary parameter container:
///   "CTRJCKPT" | u32 version | u64 header bytes | JSON header |
///   float32 little-endian blocks in parameter declaration order.
/// The header records `kind`, parameter names and shapes plus caller fields.
void save_checkpoint(const std::filesystem::path& path, std::string_view kind,
                     nlohmann::json header, const nn::ParamStore& params);

/// Reads the header only.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

/// Loads parameter values into `params`, whose names and shapes must match
/// the stored blocks. Returns the header.
nlohmann::json load_checkpoint(const std::filesystem::path& path, std::string_view kind,
                               nn::ParamStore& params);

}  // namespace cinetraj
