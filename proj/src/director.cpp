#include "cinetraj/director.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "cinetraj/checkpoint.hpp"
#include "cinetraj/error.hpp"

namespace cinetraj {

using nn::Mat;
using nn::Tape;
using nn::Var;

void DiffusionConfig::validate() const {
  if (!(sigma_min > 0.0 && sigma_min < sigma_max)) {
    throw Error(ErrorCode::kConfig, "diffusion: need 0 < sigma_min < sigma_max");
  }
  if (!(sigma_data > 0.0) || !(rho > 0.0)) {
    throw Error(ErrorCode::kConfig, "diffusion: sigma_data and rho must be positive");
  }
  if (steps < 1) throw Error(ErrorCode::kConfig, "diffusion: steps must be >= 1");
  if (!(guidance_w >= 0.0)) throw Error(ErrorCode::kConfig, "diffusion: guidance_w must be >= 0");
  if (!(cond_drop_prob >= 0.0 && cond_drop_prob <= 1.0)) {
    throw Error(ErrorCode::kConfig, "diffusion: cond_drop_prob outside [0, 1]");
  }
  if (!(p_std > 0.0)) throw Error(ErrorCode::kConfig, "diffusion: p_std must be positive");
}

Precond precondition(double sigma, double sigma_data) {
  const double s2 = sigma * sigma, d2 = sigma_data * sigma_data;
  const double root = std::sqrt(s2 + d2);
  return {d2 / (s2 + d2), sigma * sigma_data / root, 1.0 / root, std::log(sigma) / 4.0};
}

double loss_weight(double sigma, double sigma_data) {
  const double sd = sigma * sigma_data;
  return (sigma * sigma + sigma_data * sigma_data) / (sd * sd);
}

std::vector<double> sigma_schedule(const DiffusionConfig& cfg) {
  cfg.validate();
  std::vector<double> s(static_cast<std::size_t>(cfg.steps) + 1, 0.0);
  const double hi = std::pow(cfg.sigma_max, 1.0 / cfg.rho);
  const double lo = std::pow(cfg.sigma_min, 1.0 / cfg.rho);
  if (cfg.steps == 1) {
    s[0] = cfg.sigma_max;
    return s;
  }
  for (int i = 0; i < cfg.steps; ++i) {
    const double f = static_cast<double>(i) / static_cast<double>(cfg.steps - 1);
    s[i] = std::pow(hi + f * (lo - hi), cfg.rho);
  }
  return s;
}

Mat cfg_combine(const Mat& d_cond, const Mat& d_uncond, double w) {
  if (d_cond.rows() != d_uncond.rows() || d_cond.cols() != d_uncond.cols()) {
    throw Error(ErrorCode::kShape, "cfg_combine: shape mismatch");
  }
  if (w == 1.0) return d_cond;
  if (w == 0.0) return d_uncond;
  return d_uncond + w * (d_cond - d_uncond);
}

Mat heun_sample(const DenoiseFn& denoise, Mat x, std::span<const double> sigmas) {
  auto check = [](const Mat& m, std::size_t step) {
    if (!m.allFinite()) {
      throw Error(ErrorCode::kSamplerDivergence,
                  "sampler diverged at step " + std::to_string(step));
    }
  };
  for (std::size_t i = 0; i + 1 < sigmas.size(); ++i) {
    const double s = sigmas[i], s_next = sigmas[i + 1];
    const Mat d = (x - denoise(x, s)) / s;
    Mat x_next = x + (s_next - s) * d;
    if (s_next > 0.0) {
      const Mat d2 = (x_next - denoise(x_next, s_next)) / s_next;
      x_next = x + (s_next - s) * 0.5 * (d + d2);
    }
    x = std::move(x_next);
    check(x, i);
  }
  return x;
}

Mat edm_denoise(const RawNetFn& raw, const Mat& x, double sigma, double sigma_data) {
  const Precond p = precondition(sigma, sigma_data);
  return p.c_skip * x + p.c_out * raw(p.c_in * x, p.c_noise);
}

double score_loss(const Mat& d_out, const Mat& x_clean, const std::vector<bool>& mask,
                  double sigma, double sigma_data) {
  if (d_out.rows() != x_clean.rows() || d_out.cols() != x_clean.cols()) {
    throw Error(ErrorCode::kShape, "score_loss: shape mismatch");
  }
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(d_out.rows())) {
    throw Error(ErrorCode::kShape, "score_loss: mask length mismatch");
  }
  double acc = 0.0;
  std::size_t n = 0;
  for (Eigen::Index r = 0; r < d_out.rows(); ++r) {
    if (!mask.empty() && !mask[r]) continue;
    acc += (d_out.row(r) - x_clean.row(r)).squaredNorm();
    n += static_cast<std::size_t>(d_out.cols());
  }
  if (n == 0) return 0.0;
  return loss_weight(sigma, sigma_data) * acc / static_cast<double>(n);
}

Mat trajectory_features(const CameraTrajectory& traj, double translation_scale) {
  Mat f(static_cast<Eigen::Index>(traj.size()), kFeatureDim);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const Rot6D r = rot_to_6d(traj.poses[i].rotation);
    const auto row = static_cast<Eigen::Index>(i);
    for (int k = 0; k < 6; ++k) f(row, k) = r[k];
    for (int k = 0; k < 3; ++k) f(row, 6 + k) = traj.poses[i].translation[k] * translation_scale;
  }
  return f;
}

CameraTrajectory features_to_trajectory(const Mat& feats, double translation_scale, double fps) {
  if (feats.cols() != kFeatureDim) throw Error(ErrorCode::kShape, "features must have 9 columns");
  std::vector<Se3Pose> poses(static_cast<std::size_t>(feats.rows()));
  for (Eigen::Index r = 0; r < feats.rows(); ++r) {
    Rot6D d;
    for (int k = 0; k < 6; ++k) d[k] = feats(r, k);
    poses[r].rotation = rot_from_6d(d);
    poses[r].translation = Vec3(feats(r, 6), feats(r, 7), feats(r, 8)) / translation_scale;
  }
  return make_trajectory(std::move(poses), fps);
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kA: return "A";
    case Variant::kB: return "B";
    case Variant::kC: return "C";
  }
  return "?";
}

Variant variant_from_string(std::string_view s) {
  if (s == "A" || s == "a") return Variant::kA;
  if (s == "B" || s == "b") return Variant::kB;
  if (s == "C" || s == "c") return Variant::kC;
  throw Error(ErrorCode::kConfig, "unknown denoiser variant: " + std::string(s));
}

void DenoiserConfig::validate() const {
  if (layers < 1 || hidden < 2 || heads < 1 || text_layers < 0 || pre_layers < 0) {
    throw Error(ErrorCode::kConfig, "denoiser: sizes must be positive");
  }
  if (hidden % heads != 0) throw Error(ErrorCode::kConfig, "denoiser: hidden % heads != 0");
  if (hidden % 2 != 0) throw Error(ErrorCode::kConfig, "denoiser: hidden must be even");
  if (!(dropout >= 0.0 && dropout < 1.0) || !(drop_path >= 0.0 && drop_path < 1.0)) {
    throw Error(ErrorCode::kConfig, "denoiser: dropout rates must be in [0, 1)");
  }
}

Director::Director(DenoiserConfig net, DiffusionConfig diff, std::size_t vocab_size,
                   std::uint64_t seed)
    : net_(net), diff_(diff), vocab_size_(vocab_size) {
  net_.validate();
  diff_.validate();
  if (vocab_size_ == 0) throw Error(ErrorCode::kConfig, "denoiser: empty vocabulary");
  build(seed);
}

void Director::build(std::uint64_t seed) {
  nn::Rng rng(seed);
  const int d = net_.hidden, h = net_.heads;
  pos_table_ = nn::sinusoidal_table(static_cast<int>(kMaxFrames) + 8, d);

  tok_emb_ = ps_.add("text.tok", nn::normal(static_cast<Eigen::Index>(vocab_size_), d, 0.5, rng));
  null_text_ = ps_.add("null.text", nn::normal(1, d, 0.5, rng));
  null_char_ = ps_.add("null.char", nn::normal(1, d, 0.5, rng));
  for (int i = 0; i < net_.text_layers; ++i) {
    text_blocks_.push_back(nn::EncoderBlock::make(ps_, "text.blk" + std::to_string(i), d, h, rng));
  }
  text_global_ = nn::Linear::make(ps_, "text.global", d, d, rng);
  char_in_ = nn::Linear::make(ps_, "char.in", 3, d, rng);
  x_in_ = nn::Linear::make(ps_, "x.in", kFeatureDim, d, rng);
  t_mlp1_ = nn::Linear::make(ps_, "t.mlp1", d, d, rng);
  t_mlp2_ = nn::Linear::make(ps_, "t.mlp2", d, d, rng);

  switch (net_.variant) {
    case Variant::kA:
      for (int i = 0; i < net_.layers; ++i) {
        blocks_a_.push_back(nn::EncoderBlock::make(ps_, "a.blk" + std::to_string(i), d, h, rng));
      }
      break;
    case Variant::kB:
      cond_proj_ = nn::Linear::make(ps_, "b.cond", 2 * d, d, rng);
      for (int i = 0; i < net_.layers; ++i) {
        const std::string n = "b.blk" + std::to_string(i);
        blocks_b_.push_back({nn::Attention::make(ps_, n + ".attn", d, h, rng),
                             nn::FeedForward::make(ps_, n + ".ff", d, 4 * d, rng),
                             nn::Linear::make(ps_, n + ".mod", d, 6 * d, rng, true)});
      }
      break;
    case Variant::kC:
      for (int i = 0; i < net_.pre_layers; ++i) {
        pre_blocks_.push_back(nn::EncoderBlock::make(ps_, "c.pre" + std::to_string(i), d, h, rng));
      }
      for (int i = 0; i < net_.layers; ++i) {
        const std::string n = "c.blk" + std::to_string(i);
        blocks_c_.push_back({nn::Norm::make(ps_, n + ".n1", d), nn::Norm::make(ps_, n + ".n2", d),
                             nn::Norm::make(ps_, n + ".n3", d),
                             nn::Attention::make(ps_, n + ".self", d, h, rng),
                             nn::Attention::make(ps_, n + ".cross", d, h, rng),
                             nn::FeedForward::make(ps_, n + ".ff", d, 4 * d, rng)});
      }
      break;
  }
  final_norm_ = nn::Norm::make(ps_, "out.norm", d);
  out_ = nn::Linear::make(ps_, "out.proj", d, kFeatureDim, rng, true);
}

void Director::set_translation_scale(double s) {
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw Error(ErrorCode::kConfig, "translation scale must be positive");
  }
  translation_scale_ = s;
}

double Director::fit_translation_scale(std::span<const CameraTrajectory> trajs, double sigma_data) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& tr : trajs) {
    for (std::size_t i = 0; i < tr.size(); ++i) {
      if (!tr.mask.empty() && !tr.mask[i]) continue;
      for (int k = 0; k < 3; ++k) {
        const double v = tr.poses[i].translation[k];
        sum += v;
        sq += v * v;
        ++n;
      }
    }
  }
  if (n < 2) return 1.0;
  const double mean = sum / static_cast<double>(n);
  const double var = sq / static_cast<double>(n) - mean * mean;
  if (!(var > 1e-24)) return 1.0;
  return sigma_data / std::sqrt(var);
}

Var Director::timestep_embed(Tape& t, std::span<const double> sigmas) const {
  Mat f(static_cast<Eigen::Index>(sigmas.size()), net_.hidden);
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas[i] > 0.0)) throw Error(ErrorCode::kInput, "timestep_embed: sigma must be > 0");
    f.row(static_cast<Eigen::Index>(i)) =
        nn::sinusoidal_features(std::log(sigmas[i]) / 4.0, net_.hidden);
  }
  return t_mlp2_(t, nn::silu(t_mlp1_(t, t.constant(std::move(f)))));
}

namespace {

struct Layout {
  std::vector<int> len;                 // frames per item
  std::vector<int> off;                 // first stacked frame row per item
  std::vector<std::vector<int>> valid;  // local valid frame indices
  int total = 0;
};

Layout layout_of(std::span<const DenoiseItem> items, std::size_t vocab) {
  Layout l;
  for (const auto& it : items) {
    const auto n = static_cast<int>(it.x.rows());
    if (n < 1 || n > static_cast<int>(kMaxFrames) || it.x.cols() != kFeatureDim) {
      throw Error(ErrorCode::kShape, "denoise: features must be N x 9 with 1 <= N <= 300");
    }
    if (!it.cond) throw Error(ErrorCode::kInput, "denoise: missing conditioning");
    if (it.cond->hips.rows() != n || it.cond->hips.cols() != 3) {
      throw Error(ErrorCode::kShape, "denoise: character length " +
                                         std::to_string(it.cond->hips.rows()) +
                                         " does not match trajectory length " + std::to_string(n));
    }
    if (!it.mask.empty() && it.mask.size() != static_cast<std::size_t>(n)) {
      throw Error(ErrorCode::kShape, "denoise: mask length mismatch");
    }
    for (int tok : it.cond->tokens) {
      if (tok < 0 || static_cast<std::size_t>(tok) >= vocab) {
        throw Error(ErrorCode::kInput, "denoise: token id out of range");
      }
    }
    std::vector<int> v;
    for (int r = 0; r < n; ++r) {
      if (it.mask.empty() || it.mask[r]) v.push_back(r);
    }
    if (v.empty()) throw Error(ErrorCode::kInput, "denoise: no valid frames");
    l.len.push_back(n);
    l.off.push_back(l.total);
    l.valid.push_back(std::move(v));
    l.total += n;
  }
  return l;
}

Mat stacked_positions(const Mat& table, const std::vector<int>& lengths) {
  const int total = std::accumulate(lengths.begin(), lengths.end(), 0);
  Mat p(total, table.cols());
  int r = 0;
  for (int n : lengths) {
    p.middleRows(r, n) = table.topRows(n);
    r += n;
  }
  return p;
}

// Row i of the result is row idx[i] of `parts` stacked; -1 selects `fallback`.
Var pick_rows(Tape& t, Var stacked, bool has_stacked, Var fallback, const std::vector<int>& idx) {
  if (!has_stacked) return nn::gather_rows(fallback, std::vector<int>(idx.size(), 0));
  const int fb = static_cast<int>(stacked.rows());
  std::vector<int> g(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) g[i] = idx[i] < 0 ? fb : idx[i];
  std::array<Var, 2> parts{stacked, fallback};
  (void)t;
  return nn::gather_rows(nn::concat_rows(parts), std::move(g));
}

}  // namespace

Var Director::network(Tape& t, std::span<const DenoiseItem> items, DirectorTrace* trace) const {
  const Layout L = layout_of(items, vocab_size_);
  const auto B = static_cast<int>(items.size());
  const int d = net_.hidden;
  const double p_drop = net_.dropout, p_path = net_.drop_path;

  // Frame tokens.
  Mat xs(L.total, kFeatureDim);
  for (int i = 0; i < B; ++i) xs.middleRows(L.off[i], L.len[i]) = items[i].x;
  Var frames = nn::add(x_in_(t, t.constant(std::move(xs))),
                       t.constant(stacked_positions(pos_table_, L.len)));

  std::vector<double> sig(B);
  for (int i = 0; i < B; ++i) sig[i] = items[i].sigma;
  Var temb = timestep_embed(t, sig);

  // Text tokens, contextualised, for items that keep their caption.
  std::vector<int> text_item(B, -1), tok_ids, tok_len;
  std::vector<std::vector<int>> tok_groups;
  int n_text = 0, tok_rows = 0;
  for (int i = 0; i < B; ++i) {
    const auto& c = *items[i].cond;
    if (c.drop || c.tokens.empty()) continue;
    text_item[i] = n_text++;
    std::vector<int> grp;
    const int nt = std::min<int>(static_cast<int>(c.tokens.size()), static_cast<int>(pos_table_.rows()));
    for (int k = 0; k < nt; ++k) {
      tok_ids.push_back(c.tokens[k]);
      grp.push_back(tok_rows + k);
    }
    tok_len.push_back(nt);
    tok_groups.push_back(std::move(grp));
    tok_rows += nt;
  }
  Var text_tok{}, text_pooled{};
  if (n_text > 0) {
    text_tok = nn::add(nn::gather_rows(t.param(tok_emb_), tok_ids),
                       t.constant(stacked_positions(pos_table_, tok_len)));
    std::vector<std::vector<int>> all;
    for (int n : tok_len) {
      std::vector<int> v(n);
      std::iota(v.begin(), v.end(), 0);
      all.push_back(std::move(v));
    }
    const auto segs = nn::self_segments(tok_len, all);
    for (const auto& blk : text_blocks_) text_tok = blk(t, text_tok, segs, p_drop, p_path);
    text_pooled = text_global_(t, nn::pool_rows(text_tok, tok_groups));
  }

  // Character tokens for items that keep their character.
  std::vector<int> char_item(B, -1), char_len, char_src;
  std::vector<std::vector<int>> char_groups;
  int n_char = 0, char_rows = 0;
  for (int i = 0; i < B; ++i) {
    if (items[i].cond->drop) continue;
    char_item[i] = n_char++;
    char_len.push_back(L.len[i]);
    char_src.push_back(i);
    std::vector<int> grp;
    for (int r : L.valid[i]) grp.push_back(char_rows + r);
    char_groups.push_back(std::move(grp));
    char_rows += L.len[i];
  }
  Var char_tok{}, char_pooled{};
  if (n_char > 0) {
    Mat hs(char_rows, 3);
    int r = 0;
    for (int i : char_src) {
      hs.middleRows(r, L.len[i]) = items[i].cond->hips * translation_scale_;
      r += L.len[i];
    }
    char_tok = nn::add(char_in_(t, t.constant(std::move(hs))),
                       t.constant(stacked_positions(pos_table_, char_len)));
    char_pooled = nn::pool_rows(char_tok, char_groups);
  }

  Var null_text = t.param(null_text_), null_char = t.param(null_char_);
  Var out_frames{};

  std::vector<int> frame_item(L.total);
  for (int i = 0; i < B; ++i) {
    for (int r = 0; r < L.len[i]; ++r) frame_item[L.off[i] + r] = i;
  }

  if (net_.variant == Variant::kA || net_.variant == Variant::kB) {
    Var text_g = pick_rows(t, text_pooled, n_text > 0, null_text, text_item);
    Var char_p = pick_rows(t, char_pooled, n_char > 0, null_char, char_item);

    if (net_.variant == Variant::kA) {
      std::array<Var, 4> parts{temb, text_g, char_p, frames};
      Var big = nn::concat_rows(parts);
      std::vector<int> order, lens, back;
      std::vector<std::vector<int>> valid;
      int seq_rows = 0;
      for (int i = 0; i < B; ++i) {
        order.insert(order.end(), {i, B + i, 2 * B + i});
        for (int r = 0; r < L.len[i]; ++r) {
          order.push_back(3 * B + L.off[i] + r);
          back.push_back(seq_rows + 3 + r);
        }
        std::vector<int> v{0, 1, 2};
        for (int r : L.valid[i]) v.push_back(3 + r);
        valid.push_back(std::move(v));
        lens.push_back(L.len[i] + 3);
        seq_rows += L.len[i] + 3;
      }
      Var seq = nn::gather_rows(big, std::move(order));
      if (trace) trace->trunk_in = frames.value();
      const auto segs = nn::self_segments(lens, valid);
      for (const auto& blk : blocks_a_) seq = blk(t, seq, segs, p_drop, p_path);
      out_frames = nn::gather_rows(seq, std::move(back));
    } else {
      std::array<Var, 2> cc{text_g, char_p};
      Var cond = nn::silu(nn::add(cond_proj_(t, nn::concat_cols(cc)), temb));
      const auto segs = nn::self_segments(L.len, L.valid);
      Var h = frames;
      if (trace) trace->trunk_in = h.value();
      for (const auto& blk : blocks_b_) {
        Var m = nn::gather_rows(blk.mod(t, cond), frame_item);
        auto part = [&](int k) { return nn::slice_cols(m, k * d, d); };
        Var h1 = nn::modulate(nn::layer_norm(h), part(0), part(1));
        Var a = nn::dropout(blk.attn(t, h1, h1, segs), p_drop);
        h = nn::add(h, nn::drop_path(nn::mul(part(2), a), p_path));
        Var h2 = nn::modulate(nn::layer_norm(h), part(3), part(4));
        Var f = nn::dropout(blk.ff(t, h2, p_drop), p_drop);
        h = nn::add(h, nn::drop_path(nn::mul(part(5), f), p_path));
      }
      out_frames = h;
    }
  } else {
    // Conditioning memory: caption tokens then character frames, or the two
    // null tokens when conditioning is dropped.
    std::vector<Var> mem_parts;
    int text_base = -1, char_base = -1, null_base = 0;
    if (n_text > 0) {
      text_base = null_base;
      mem_parts.push_back(text_tok);
      null_base += tok_rows;
    }
    if (n_char > 0) {
      char_base = null_base;
      mem_parts.push_back(char_tok);
      null_base += char_rows;
    }
    mem_parts.push_back(null_text);
    mem_parts.push_back(null_char);
    Var mem_all = nn::concat_rows(mem_parts);

    std::vector<int> order, mem_len;
    std::vector<std::vector<int>> mem_valid;
    std::vector<int> tok_off(n_text, 0), chr_off(n_char, 0);
    for (int k = 1; k < n_text; ++k) tok_off[k] = tok_off[k - 1] + tok_len[k - 1];
    for (int k = 1; k < n_char; ++k) chr_off[k] = chr_off[k - 1] + char_len[k - 1];
    for (int i = 0; i < B; ++i) {
      std::vector<int> v;
      int n = 0;
      if (text_item[i] >= 0) {
        const int k = text_item[i];
        for (int r = 0; r < tok_len[k]; ++r) {
          order.push_back(text_base + tok_off[k] + r);
          v.push_back(n++);
        }
      } else {
        order.push_back(null_base);
        v.push_back(n++);
      }
      if (char_item[i] >= 0) {
        const int k = char_item[i];
        for (int r = 0; r < L.len[i]; ++r) order.push_back(char_base + chr_off[k] + r);
        for (int r : L.valid[i]) v.push_back(n + r);
        n += L.len[i];
      } else {
        order.push_back(null_base + 1);
        v.push_back(n++);
      }
      mem_len.push_back(n);
      mem_valid.push_back(std::move(v));
    }
    Var mem = nn::gather_rows(mem_all, std::move(order));
    const auto mem_segs = nn::self_segments(mem_len, mem_valid);
    for (const auto& blk : pre_blocks_) mem = blk(t, mem, mem_segs, p_drop, p_path);

    std::array<Var, 2> parts{temb, frames};
    Var big = nn::concat_rows(parts);
    std::vector<int> seq_order, lens, back;
    std::vector<std::vector<int>> valid;
    std::vector<nn::AttentionSegment> cross;
    int seq_rows = 0, mem_rows = 0;
    for (int i = 0; i < B; ++i) {
      seq_order.push_back(i);
      for (int r = 0; r < L.len[i]; ++r) {
        seq_order.push_back(B + L.off[i] + r);
        back.push_back(seq_rows + 1 + r);
      }
      std::vector<int> v{0};
      for (int r : L.valid[i]) v.push_back(1 + r);
      valid.push_back(std::move(v));
      nn::AttentionSegment cs;
      cs.q_begin = seq_rows;
      cs.q_len = L.len[i] + 1;
      for (int r : mem_valid[i]) cs.keys.push_back(mem_rows + r);
      cross.push_back(std::move(cs));
      lens.push_back(L.len[i] + 1);
      seq_rows += L.len[i] + 1;
      mem_rows += mem_len[i];
    }
    Var h = nn::gather_rows(big, std::move(seq_order));
    if (trace) trace->trunk_in = frames.value();
    const auto segs = nn::self_segments(lens, valid);
    for (const auto& blk : blocks_c_) {
      Var a = blk.n1(t, h);
      h = nn::add(h, nn::drop_path(nn::dropout(blk.self_attn(t, a, a, segs), p_drop), p_path));
      Var c = nn::dropout(blk.cross_attn(t, blk.n2(t, h), mem, cross), p_drop);
      h = nn::add(h, nn::drop_path(c, p_path));
      Var f = nn::dropout(blk.ff(t, blk.n3(t, h), p_drop), p_drop);
      h = nn::add(h, nn::drop_path(f, p_path));
    }
    out_frames = nn::gather_rows(h, std::move(back));
  }

  if (trace) trace->trunk_out = out_frames.value();
  return out_(t, final_norm_(t, out_frames));
}

Var Director::denoise(Tape& t, std::span<const DenoiseItem> items, DirectorTrace* trace) const {
  std::vector<DenoiseItem> scaled(items.begin(), items.end());
  int total = 0;
  for (const auto& it : items) total += static_cast<int>(it.x.rows());
  Mat skip_x(total, kFeatureDim), c_out(total, kFeatureDim);
  int r = 0;
  for (auto& it : scaled) {
    if (!(it.sigma > 0.0)) throw Error(ErrorCode::kInput, "denoise: sigma must be > 0");
    const Precond p = precondition(it.sigma, diff_.sigma_data);
    const auto n = it.x.rows();
    skip_x.middleRows(r, n) = p.c_skip * it.x;
    c_out.middleRows(r, n).setConstant(p.c_out);
    it.x *= p.c_in;
    r += static_cast<int>(n);
  }
  Var f = network(t, scaled, trace);
  return nn::add(t.constant(std::move(skip_x)), nn::mul_const(f, c_out));
}

Var Director::loss(Tape& t, std::span<const DenoiseItem> items, std::span<const Mat> clean) const {
  if (clean.size() != items.size()) throw Error(ErrorCode::kShape, "loss: batch size mismatch");
  Var dout = denoise(t, items);
  Mat target(dout.rows(), kFeatureDim), w = Mat::Zero(dout.rows(), kFeatureDim);
  int r = 0;
  const double inv_b = 1.0 / static_cast<double>(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto n = items[i].x.rows();
    if (clean[i].rows() != n || clean[i].cols() != kFeatureDim) {
      throw Error(ErrorCode::kShape, "loss: clean features shape mismatch");
    }
    target.middleRows(r, n) = clean[i];
    std::size_t nv = 0;
    for (Eigen::Index k = 0; k < n; ++k) nv += items[i].mask.empty() || items[i].mask[k];
    const double wt = loss_weight(items[i].sigma, diff_.sigma_data) * inv_b /
                      static_cast<double>(nv * kFeatureDim);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (items[i].mask.empty() || items[i].mask[k]) w.row(r + k).setConstant(wt);
    }
    r += static_cast<int>(n);
  }
  return nn::weighted_sum(nn::square(nn::sub(dout, t.constant(std::move(target)))), w);
}

std::vector<TrainStep> Director::train(std::span<const DirectorExample> data,
                                       const DirectorTrainOptions& opt) {
  if (data.empty()) throw Error(ErrorCode::kInput, "train: empty dataset");
  if (opt.steps < 0 || opt.batch < 1) throw Error(ErrorCode::kConfig, "train: bad steps/batch");
  diff_.validate();
  nn::AdamW adam(ps_, opt.optim);
  nn::Rng rng(diff_.seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution drop(diff_.cond_drop_prob);

  std::vector<TrainStep> curve;
  curve.reserve(static_cast<std::size_t>(opt.steps));
  nn::GradBuffer grads(ps_);
  for (int step = 0; step < opt.steps; ++step) {
    std::vector<CondInput> conds(opt.batch);
    std::vector<DenoiseItem> items(opt.batch);
    std::vector<Mat> clean(opt.batch);
    double last_sigma = 0.0;
    for (int b = 0; b < opt.batch; ++b) {
      const auto& ex = data[pick(rng)];
      const double sigma = std::exp(diff_.p_mean + diff_.p_std * gauss(rng));
      Mat noise(ex.x.rows(), kFeatureDim);
      for (Eigen::Index k = 0; k < noise.size(); ++k) noise.data()[k] = gauss(rng);
      conds[b] = ex.cond;
      conds[b].drop = drop(rng);
      items[b].x = ex.x + sigma * noise;
      items[b].sigma = sigma;
      items[b].cond = &conds[b];
      items[b].mask = ex.mask;
      clean[b] = ex.x;
      last_sigma = sigma;
    }
    Tape t(&ps_, true, rng());
    Var l = loss(t, items, clean);
    const double lv = l.value()(0, 0);
    if (!std::isfinite(lv)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << step << " (last sigma " << last_sigma << ")";
      throw Error(ErrorCode::kNonFiniteLoss, msg.str());
    }
    t.backward(l);
    grads.zero();
    t.accumulate(grads);
    TrainStep s;
    s.step = step;
    s.loss = lv;
    s.lr = nn::scheduled_lr(opt.optim, adam.steps_taken());
    s.grad_norm = adam.step(ps_, grads);
    s.last_sigma = last_sigma;
    curve.push_back(s);
    if (opt.on_step) opt.on_step(s);
  }
  return curve;
}

std::vector<Mat> Director::sample_features(std::span<const SampleRequest> requests) const {
  diff_.validate();
  const auto sigmas = sigma_schedule(diff_);
  const double w = diff_.guidance_w;
  const auto B = requests.size();
  std::vector<CondInput> cond(B), uncond(B);
  std::vector<int> off(B + 1, 0);
  for (std::size_t i = 0; i < B; ++i) {
    const auto n = requests[i].hips.rows();
    if (n < 1 || requests[i].hips.cols() != 3) {
      throw Error(ErrorCode::kShape, "sample: hips must be N x 3 with N >= 1");
    }
    cond[i].hips = requests[i].hips;
    cond[i].tokens = requests[i].tokens;
    uncond[i].hips = requests[i].hips;
    uncond[i].drop = true;
    off[i + 1] = off[i] + static_cast<int>(n);
  }

  nn::Rng rng(diff_.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Mat x(off[B], kFeatureDim);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = gauss(rng) * sigmas.front();

  auto denoise_fn = [&](const Mat& xs, double sigma) {
    const bool need_c = w != 0.0, need_u = w != 1.0;
    std::vector<DenoiseItem> items;
    for (std::size_t i = 0; i < B && need_c; ++i) {
      items.push_back({xs.middleRows(off[i], off[i + 1] - off[i]), sigma, &cond[i], {}});
    }
    for (std::size_t i = 0; i < B && need_u; ++i) {
      items.push_back({xs.middleRows(off[i], off[i + 1] - off[i]), sigma, &uncond[i], {}});
    }
    Tape t(&ps_, false, 0);
    const Mat d = denoise(t, items).value();
    if (need_c && need_u) return cfg_combine(d.topRows(off[B]), d.bottomRows(off[B]), w);
    return d;
  };
  const Mat out = heun_sample(denoise_fn, std::move(x), sigmas);
  std::vector<Mat> res;
  for (std::size_t i = 0; i < B; ++i) res.push_back(out.middleRows(off[i], off[i + 1] - off[i]));
  return res;
}

std::vector<CameraTrajectory> Director::sample(std::span<const SampleRequest> requests) const {
  const auto feats = sample_features(requests);
  std::vector<CameraTrajectory> out;
  out.reserve(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) {
    out.push_back(features_to_trajectory(feats[i], translation_scale_, requests[i].fps));
  }
  return out;
}

void Director::save(const std::filesystem::path& path, std::uint64_t vocab_hash) const {
  nlohmann::json h;
  h["variant"] = std::string(to_string(net_.variant));
  h["net"] = {{"layers", net_.layers},         {"hidden", net_.hidden},
              {"heads", net_.heads},           {"dropout", net_.dropout},
              {"drop_path", net_.drop_path},   {"text_layers", net_.text_layers},
              {"pre_layers", net_.pre_layers}};
  h["diffusion"] = {{"sigma_min", diff_.sigma_min},   {"sigma_max", diff_.sigma_max},
                    {"sigma_data", diff_.sigma_data}, {"rho", diff_.rho},
                    {"steps", diff_.steps},           {"guidance_w", diff_.guidance_w},
                    {"cond_drop_prob", diff_.cond_drop_prob},
                    {"p_mean", diff_.p_mean},         {"p_std", diff_.p_std},
                    {"seed", diff_.seed}};
  h["vocab_size"] = vocab_size_;
  h["vocab_hash"] = std::to_string(vocab_hash);
  h["translation_scale"] = translation_scale_;
  save_checkpoint(path, "director", h, ps_);
}

Director Director::load(const std::filesystem::path& path, std::uint64_t vocab_hash) {
  const auto h = read_checkpoint_header(path);
  try {
    if (h.at("kind") != "director") throw Error(ErrorCode::kFormat, "not a director checkpoint");
    if (h.at("vocab_hash").get<std::string>() != std::to_string(vocab_hash)) {
      throw Error(ErrorCode::kFormat, "checkpoint vocabulary hash does not match");
    }
    DenoiserConfig net;
    net.variant = variant_from_string(h.at("variant").get<std::string>());
    const auto& n = h.at("net");
    net.layers = n.at("layers");
    net.hidden = n.at("hidden");
    net.heads = n.at("heads");
    net.dropout = n.at("dropout");
    net.drop_path = n.at("drop_path");
    net.text_layers = n.at("text_layers");
    net.pre_layers = n.at("pre_layers");
    DiffusionConfig diff;
    const auto& dj = h.at("diffusion");
    diff.sigma_min = dj.at("sigma_min");
    diff.sigma_max = dj.at("sigma_max");
    diff.sigma_data = dj.at("sigma_data");
    diff.rho = dj.at("rho");
    diff.steps = dj.at("steps");
    diff.guidance_w = dj.at("guidance_w");
    diff.cond_drop_prob = dj.at("cond_drop_prob");
    diff.p_mean = dj.at("p_mean");
    diff.p_std = dj.at("p_std");
    diff.seed = dj.at("seed");
    Director d(net, diff, h.at("vocab_size").get<std::size_t>(), 0);
    d.set_translation_scale(h.at("translation_scale"));
    load_checkpoint(path, "director", d.ps_);
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("director checkpoint header: ") + e.what());
  }
}

}  // namespace cinetraj
