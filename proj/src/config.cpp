#include "cinetraj/config.hpp"

#include <fstream>
#include <set>

#include "cinetraj/checkpoint.hpp"
#include "cinetraj/error.hpp"

namespace cinetraj {
namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const char* what) {
  if (!j.is_object()) throw Error(ErrorCode::kConfig, std::string(what) + " config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw Error(ErrorCode::kConfig, std::string(what) + " config: unknown key '" + k + "'");
  }
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

template <typename F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string(what) + " config: " + e.what());
  }
}

}  // namespace

json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
}

TagConfig tag_config_from_json(const json& j) {
  check_keys(j, {"static_thresh_lin", "dominance_ratio", "smooth_window", "min_segment_len"}, "tag");
  return guarded("tag", [&] {
    TagConfig c;
    get(j, "static_thresh_lin", c.static_thresh_lin);
    get(j, "dominance_ratio", c.dominance_ratio);
    get(j, "smooth_window", c.smooth_window);
    get(j, "min_segment_len", c.min_segment_len);
    c.validate();
    return c;
  });
}

CleanConfig clean_config_from_json(const json& j) {
  check_keys(j,
             {"percentile", "scale_factor", "min_subtraj_len", "max_len", "kalman_process_var",
              "kalman_obs_var", "rotation_window"},
             "clean");
  return guarded("clean", [&] {
    CleanConfig c;
    get(j, "percentile", c.percentile);
    get(j, "scale_factor", c.scale_factor);
    get(j, "min_subtraj_len", c.min_subtraj_len);
    get(j, "max_len", c.max_len);
    get(j, "kalman_process_var", c.kalman_process_var);
    get(j, "kalman_obs_var", c.kalman_obs_var);
    get(j, "rotation_window", c.rotation_window);
    c.validate();
    return c;
  });
}

DirectorSetup director_setup_from_json(const json& j) {
  check_keys(j,
             {"variant", "layers", "hidden", "heads", "dropout", "drop_path", "text_layers", "pre_layers",
              "sigma_min", "sigma_max", "sigma_data", "rho", "sample_steps", "guidance", "cond_drop_prob",
              "p_mean", "p_std", "seed", "steps", "batch", "lr", "beta1", "beta2", "weight_decay",
              "warmup_steps", "cosine", "grad_clip"},
             "director");
  return guarded("director", [&] {
    DirectorSetup s;
    if (j.contains("variant")) s.net.variant = variant_from_string(j.at("variant").get<std::string>());
    get(j, "layers", s.net.layers);
    get(j, "hidden", s.net.hidden);
    get(j, "heads", s.net.heads);
    get(j, "dropout", s.net.dropout);
    get(j, "drop_path", s.net.drop_path);
    get(j, "text_layers", s.net.text_layers);
    get(j, "pre_layers", s.net.pre_layers);
    auto& d = s.diffusion;
    get(j, "sigma_min", d.sigma_min);
    get(j, "sigma_max", d.sigma_max);
    get(j, "sigma_data", d.sigma_data);
    get(j, "rho", d.rho);
    get(j, "sample_steps", d.steps);
    get(j, "guidance", d.guidance_w);
    get(j, "cond_drop_prob", d.cond_drop_prob);
    get(j, "p_mean", d.p_mean);
    get(j, "p_std", d.p_std);
    get(j, "seed", d.seed);
    s.init_seed = d.seed;
    auto& t = s.train;
    get(j, "steps", t.steps);
    get(j, "batch", t.batch);
    get(j, "lr", t.optim.lr);
    get(j, "beta1", t.optim.beta1);
    get(j, "beta2", t.optim.beta2);
    get(j, "weight_decay", t.optim.weight_decay);
    get(j, "warmup_steps", t.optim.warmup_steps);
    get(j, "grad_clip", t.optim.clip_norm);
    bool cosine = false;
    get(j, "cosine", cosine);
    t.optim.total_steps = cosine ? t.steps : 0;
    s.net.validate();
    d.validate();
    if (t.steps < 1 || t.batch < 1) throw Error(ErrorCode::kConfig, "director config: steps and batch must be positive");
    return s;
  });
}

ClatrConfig clatr_config_from_json(const json& j) {
  check_keys(j,
             {"layers", "hidden", "heads", "dropout", "latent_dim", "batch", "lr", "w_recon", "w_latent", "w_kl",
              "w_contrastive", "temperature", "steps", "seed"},
             "clatr");
  return guarded("clatr", [&] {
    ClatrConfig c;
    get(j, "layers", c.layers);
    get(j, "hidden", c.hidden);
    get(j, "heads", c.heads);
    get(j, "dropout", c.dropout);
    get(j, "latent_dim", c.latent_dim);
    get(j, "batch", c.batch);
    get(j, "lr", c.lr);
    get(j, "w_recon", c.w_recon);
    get(j, "w_latent", c.w_latent);
    get(j, "w_kl", c.w_kl);
    get(j, "w_contrastive", c.w_contrastive);
    get(j, "temperature", c.temperature);
    get(j, "steps", c.steps);
    get(j, "seed", c.seed);
    c.validate();
    return c;
  });
}

}  // namespace cinetraj
