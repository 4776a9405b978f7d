#pragma once

#include <array>
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

struct ClatrConfig {
  int layers = 6;
  int hidden = 256;
  int heads = 4;
  double dropout = 0.1;
  int latent_dim = 256;
  int batch = 32;
  double lr = 1e-5;
  double w_recon = 1.0;
  double w_latent = 1e-5;
  double w_kl = 1e-5;
  double w_contrastive = 0.1;
  double temperature = 0.1;
  int steps = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LatentDist {
  nn::Mat mu;      // 1 x latent
  nn::Mat logvar;  // 1 x latent, clamped to [-30, 20]
};

struct ClatrExample {
  nn::Mat x;               // N x 9 trajectory features (unscaled translation)
  std::vector<bool> mask;  // empty: all valid
  std::vector<int> tokens;
};

/// Component values before weighting, and the weighted total.
struct ClatrLoss {
  static constexpr std::array<std::string_view, 4> kLabels{"recon", "latent", "kl", "contrastive"};

  double recon = 0.0;
  double latent = 0.0;
  double kl = 0.0;  // sum of the four KL terms
  double contrastive = 0.0;
  double total = 0.0;
  /// Set when the batch had a single pair and the contrastive term was skipped.
  bool contrastive_skipped = false;
  std::array<double, 4> weights{};
};

struct RetrievalMetrics {
  // Percentages for k = 1, 2, 3, 5, 10 and the median 1-based rank.
  std::array<double, 5> recall{};
  double median_rank = 0.0;
};
inline constexpr std::array<int, 5> kRecallKs{1, 2, 3, 5, 10};

struct RetrievalReport {
  RetrievalMetrics text_to_traj;
  RetrievalMetrics traj_to_text;
};

/// Rows of `text` and `traj` are paired by index; ranks use cosine
/// similarity with ties resolved in favour of the lower index.
RetrievalReport retrieval_metrics(const nn::Mat& text, const nn::Mat& traj);

/// Closed-form KL(N(mu_p, e^lv_p) || N(mu_q, e^lv_q)) for diagonal Gaussians.
double gaussian_kl(const nn::Mat& mu_p, const nn::Mat& lv_p, const nn::Mat& mu_q,
                   const nn::Mat& lv_q);
/// Symmetric InfoNCE over rows of paired embeddings (cosine / temperature).
double info_nce(const nn::Mat& a, const nn::Mat& b, double temperature);

struct ClatrTrainStep {
  int step = 0;
  ClatrLoss loss;
};

class Clatr {
 public:
  Clatr(ClatrConfig cfg, std::size_t vocab_size);

  const ClatrConfig& config() const { return cfg_; }
  std::size_t vocab_size() const { return vocab_size_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }
  double translation_scale() const { return translation_scale_; }
  void set_translation_scale(double s);

  /// Batched encoders on a tape; each returns (mu, logvar) stacked B x latent.
  std::pair<nn::Var, nn::Var> encode_traj(nn::Tape& t, std::span<const ClatrExample> xs) const;
  std::pair<nn::Var, nn::Var> encode_text(nn::Tape& t, std::span<const ClatrExample> xs) const;
  /// Decodes each latent row into lengths[i] frames; rows stacked.
  nn::Var decode(nn::Tape& t, nn::Var z, const std::vector<int>& lengths,
                 const std::vector<std::vector<int>>& valid) const;

  /// Evaluation-mode conveniences.
  std::vector<LatentDist> encode_traj(std::span<const ClatrExample> xs) const;
  std::vector<LatentDist> encode_text(std::span<const ClatrExample> xs) const;
  nn::Mat decode(const nn::Mat& z, int n) const;

  /// Total loss on the tape plus the component breakdown. `eps_seed` drives
  /// the reparameterisation noise.
  std::pair<nn::Var, ClatrLoss> loss(nn::Tape& t, std::span<const ClatrExample> batch,
                                     std::uint64_t eps_seed) const;

  std::vector<ClatrTrainStep> train(std::span<const ClatrExample> data,
                                    const std::function<void(const ClatrTrainStep&)>& on_step = {});

  void save(const std::filesystem::path& path, std::uint64_t vocab_hash) const;
  static Clatr load(const std::filesystem::path& path, std::uint64_t vocab_hash);

 private:
  struct Encoder {
    int dist_tokens = -1;  // 2 x d: mu and logvar readout tokens
    std::vector<nn::EncoderBlock> blocks;
    nn::Norm norm;
    nn::Linear mu, logvar;
  };

  Encoder make_encoder(const std::string& name, nn::Rng& rng);
  std::pair<nn::Var, nn::Var> run_encoder(nn::Tape& t, const Encoder& enc, nn::Var tokens,
                                          const std::vector<int>& lengths,
                                          const std::vector<std::vector<int>>& valid) const;
  void build(std::uint64_t seed);

  ClatrConfig cfg_;
  std::size_t vocab_size_;
  double translation_scale_ = 1.0;
  nn::ParamStore ps_;
  nn::Mat pos_table_;

  nn::Linear x_in_;
  int tok_emb_ = -1;
  Encoder traj_enc_, text_enc_;
  nn::Linear z_in_;
  std::vector<nn::EncoderBlock> dec_blocks_;
  nn::Norm dec_norm_;
  nn::Linear dec_out_;
};

}  // namespace cinetraj
