#pragma once

#include <vector>

#include "cinetraj/nn/params.hpp"
#include "cinetraj/nn/tape.hpp"

namespace cinetraj::nn {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int warmup_steps = 0;
  /// Cosine decay ends here; 0 keeps the rate flat after warmup.
  int total_steps = 0;
  /// Global gradient-norm clip; <= 0 disables.
  double clip_norm = 1.0;
};

/// Linear warmup then cosine decay to zero.
double scheduled_lr(const AdamWConfig& cfg, int step);

class AdamW {
 public:
  AdamW(const ParamStore& params, AdamWConfig cfg);

  /// One update from summed gradients; returns the pre-clip gradient norm.
  /// Weight decay is skipped for single-row parameters (biases, gains,
  /// learned tokens).
  double step(ParamStore& params, GradBuffer& grads);
  int steps_taken() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<Mat> m_, v_;
  int t_ = 0;
};

}  // namespace cinetraj::nn
