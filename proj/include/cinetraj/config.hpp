#pragma once

#include <filesystem>

#include <json.hpp>

#include "cinetraj/clatr.hpp"
#include "cinetraj/clean.hpp"
#include "cinetraj/director.hpp"
#include "cinetraj/tagging.hpp"

namespace cinetraj {

// JSON loaders for command configs. Missing keys keep their defaults;
// unknown keys and wrong types raise Error(kConfig).

nlohmann::json read_json_file(const std::filesystem::path& path);

TagConfig tag_config_from_json(const nlohmann::json& j);
CleanConfig clean_config_from_json(const nlohmann::json& j);

struct DirectorSetup {
  DenoiserConfig net;
  DiffusionConfig diffusion;
  DirectorTrainOptions train;
  std::uint64_t init_seed = 0;
};
/// Keys: variant, layers, hidden, heads, dropout, drop_path, text_layers,
/// pre_layers, sigma_min, sigma_max, sigma_data, rho, sample_steps,
/// guidance, cond_drop_prob, p_mean, p_std, seed, steps, batch, lr,
/// beta1, beta2, weight_decay, warmup_steps, cosine, grad_clip.
DirectorSetup director_setup_from_json(const nlohmann::json& j);

/// Keys are the ClatrConfig field names.
ClatrConfig clatr_config_from_json(const nlohmann::json& j);

}  // namespace cinetraj
