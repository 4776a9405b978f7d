#include "cinetraj/nn/optim.hpp"

#include <cmath>
#include <numbers>

namespace cinetraj::nn {

double scheduled_lr(const AdamWConfig& cfg, int step) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.total_steps <= cfg.warmup_steps) return cfg.lr;
  const double progress = std::min(
      1.0, static_cast<double>(step - cfg.warmup_steps) /
               static_cast<double>(cfg.total_steps - cfg.warmup_steps));
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(const ParamStore& params, AdamWConfig cfg) : cfg_(cfg) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& p = params.value(static_cast<int>(i));
    m_.push_back(Mat::Zero(p.rows(), p.cols()));
    v_.push_back(Mat::Zero(p.rows(), p.cols()));
  }
}

double AdamW::step(ParamStore& params, GradBuffer& grads) {
  const double norm = std::sqrt(grads.squared_norm());
  if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) grads.scale(cfg_.clip_norm / norm);

  const double lr = scheduled_lr(cfg_, t_);
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t i = 0; i < m_.size(); ++i) {
    Mat& p = params.value(static_cast<int>(i));
    const Mat& g = grads.grads[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    if (p.rows() > 1 && cfg_.weight_decay > 0.0) p *= 1.0 - lr * cfg_.weight_decay;
    p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
  return norm;
}

}  // namespace cinetraj::nn
