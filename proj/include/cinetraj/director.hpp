#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "cinetraj/geom.hpp"
#include "cinetraj/nn/layers.hpp"
#include "cinetraj/nn/optim.hpp"

namespace cinetraj {

/// Per-frame feature: 6D rotation followed by the (scaled) translation.
inline constexpr int kFeatureDim = 9;

struct DiffusionConfig {
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double sigma_data = 0.5;
  double rho = 7.0;
  int steps = 32;
  double guidance_w = 1.0;
  double cond_drop_prob = 0.1;
  // ln(sigma) ~ N(p_mean, p_std^2) during training.
  double p_mean = -1.2;
  double p_std = 1.2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Precond {
  double c_skip, c_out, c_in, c_noise;
};
Precond precondition(double sigma, double sigma_data);
/// (sigma^2 + sigma_d^2) / (sigma * sigma_d)^2
double loss_weight(double sigma, double sigma_data);

/// steps + 1 noise levels, decreasing from sigma_max, ending at exactly 0.
std::vector<double> sigma_schedule(const DiffusionConfig& cfg);

/// d_uncond + w (d_cond - d_uncond); w == 1 and w == 0 return an operand as is.
nn::Mat cfg_combine(const nn::Mat& d_cond, const nn::Mat& d_uncond, double w);

using DenoiseFn = std::function<nn::Mat(const nn::Mat& x, double sigma)>;
/// Deterministic Heun integration of the probability-flow ODE. `x` must
/// already be scaled to sigmas.front(). Throws kSamplerDivergence naming the
/// step on a non-finite state.
nn::Mat heun_sample(const DenoiseFn& denoise, nn::Mat x, std::span<const double> sigmas);

/// Raw network F(c_in x, c_noise).
using RawNetFn = std::function<nn::Mat(const nn::Mat& x_in, double c_noise)>;
/// D = c_skip x + c_out F(c_in x, c_noise).
nn::Mat edm_denoise(const RawNetFn& raw, const nn::Mat& x, double sigma, double sigma_data);

/// Mean over unmasked frames and channels of lambda(sigma) (D - x)^2. An
/// empty mask means every frame counts.
double score_loss(const nn::Mat& d_out, const nn::Mat& x_clean, const std::vector<bool>& mask,
                  double sigma, double sigma_data);

nn::Mat trajectory_features(const CameraTrajectory& traj, double translation_scale = 1.0);
CameraTrajectory features_to_trajectory(const nn::Mat& feats, double translation_scale,
                                        double fps);

enum class Variant { kA, kB, kC };
std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view s);

struct DenoiserConfig {
  Variant variant = Variant::kC;
  int layers = 4;
  int hidden = 64;
  int heads = 4;
  double dropout = 0.1;
  double drop_path = 0.1;
  int text_layers = 1;
  // Variant C only: depth of the shared conditioning encoder.
  int pre_layers = 2;

  void validate() const;
};

struct CondInput {
  nn::Mat hips;             // N x 3 in meters; scaled inside the network
  std::vector<int> tokens;  // caption ids
  bool drop = false;        // replace text and character with null tokens
};

struct DenoiseItem {
  nn::Mat x;  // N x 9, noisy features
  double sigma = 1.0;
  const CondInput* cond = nullptr;
  std::vector<bool> mask;  // empty: all frames valid
};

/// Optional taps into the network for tests.
struct DirectorTrace {
  nn::Mat trunk_in;   // frame rows entering the transformer
  nn::Mat trunk_out;  // frame rows leaving it
};

struct DirectorExample {
  nn::Mat x;  // clean features, N x 9
  CondInput cond;
  std::vector<bool> mask;
};

struct TrainStep {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  double last_sigma = 0.0;
};

struct DirectorTrainOptions {
  int steps = 1000;
  int batch = 16;
  nn::AdamWConfig optim{};
  std::function<void(const TrainStep&)> on_step;
};

struct SampleRequest {
  std::vector<int> tokens;
  nn::Mat hips;  // N x 3 in meters; sets the length
  double fps = 25.0;
};

class Director {
 public:
  Director(DenoiserConfig net, DiffusionConfig diff, std::size_t vocab_size, std::uint64_t seed);

  const DenoiserConfig& net_config() const { return net_; }
  const DiffusionConfig& diffusion() const { return diff_; }
  DiffusionConfig& diffusion() { return diff_; }
  std::size_t vocab_size() const { return vocab_size_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

  /// Multiplies translations and hips before they enter the network.
  double translation_scale() const { return translation_scale_; }
  void set_translation_scale(double s);
  /// sigma_data / std of the translation coordinates over valid frames.
  static double fit_translation_scale(std::span<const CameraTrajectory> trajs, double sigma_data);

  nn::Var timestep_embed(nn::Tape& t, std::span<const double> sigmas) const;

  /// Preconditioned denoiser D for a batch; rows are the items' frames
  /// stacked in order.
  nn::Var denoise(nn::Tape& t, std::span<const DenoiseItem> items,
                  DirectorTrace* trace = nullptr) const;
  /// Raw network on already c_in-scaled inputs.
  nn::Var network(nn::Tape& t, std::span<const DenoiseItem> items, DirectorTrace* trace) const;

  /// Batch training loss: mean over items of score_loss.
  nn::Var loss(nn::Tape& t, std::span<const DenoiseItem> items,
               std::span<const nn::Mat> clean) const;

  std::vector<TrainStep> train(std::span<const DirectorExample> data,
                               const DirectorTrainOptions& opt);

  /// Guided Heun sampling, one trajectory per request; uses diffusion()
  /// for steps, guidance and seed.
  std::vector<CameraTrajectory> sample(std::span<const SampleRequest> requests) const;
  /// Same, returning features in network units.
  std::vector<nn::Mat> sample_features(std::span<const SampleRequest> requests) const;

  void save(const std::filesystem::path& path, std::uint64_t vocab_hash) const;
  static Director load(const std::filesystem::path& path, std::uint64_t vocab_hash);

 private:
  struct AdaBlock {
    nn::Attention attn;
    nn::FeedForward ff;
    nn::Linear mod;  // d -> 6d, zero-initialised
  };
  struct CrossBlock {
    nn::Norm n1, n2, n3;
    nn::Attention self_attn, cross_attn;
    nn::FeedForward ff;
  };

  void build(std::uint64_t seed);

  DenoiserConfig net_;
  DiffusionConfig diff_;
  std::size_t vocab_size_;
  double translation_scale_ = 1.0;
  nn::ParamStore ps_;
  nn::Mat pos_table_;

  int tok_emb_ = -1, null_text_ = -1, null_char_ = -1;
  std::vector<nn::EncoderBlock> text_blocks_;
  nn::Linear text_global_, char_in_, x_in_, t_mlp1_, t_mlp2_, cond_proj_, out_;
  nn::Norm final_norm_;
  std::vector<nn::EncoderBlock> blocks_a_;
  std::vector<AdaBlock> blocks_b_;
  std::vector<nn::EncoderBlock> pre_blocks_;
  std::vector<CrossBlock> blocks_c_;
};

}  // namespace cinetraj
