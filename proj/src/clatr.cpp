#include "cinetraj/clatr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cinetraj/checkpoint.hpp"
#include "cinetraj/director.hpp"
#include "cinetraj/error.hpp"

namespace cinetraj {

using nn::Mat;
using nn::Tape;
using nn::Var;

void ClatrConfig::validate() const {
  if (layers < 1 || hidden < 2 || heads < 1 || latent_dim < 1 || batch < 1 || steps < 0) {
    throw Error(ErrorCode::kConfig, "clatr: sizes must be positive");
  }
  if (hidden % heads != 0) throw Error(ErrorCode::kConfig, "clatr: hidden % heads != 0");
  if (!(lr > 0.0) || !(temperature > 0.0)) {
    throw Error(ErrorCode::kConfig, "clatr: lr and temperature must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorCode::kConfig, "clatr: bad dropout");
  if (w_recon < 0 || w_latent < 0 || w_kl < 0 || w_contrastive < 0) {
    throw Error(ErrorCode::kConfig, "clatr: loss weights must be nonnegative");
  }
}

namespace {

std::vector<int> ranks_for(const Mat& q, const Mat& c) {
  // q, c: rows already L2-normalised.
  const Mat s = q * c.transpose();
  std::vector<int> ranks(static_cast<std::size_t>(q.rows()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double own = s(i, i);
    int rank = 1;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      if (j == i) continue;
      if (s(i, j) > own || (s(i, j) == own && j < i)) ++rank;
    }
    ranks[i] = rank;
  }
  return ranks;
}

RetrievalMetrics summarise(std::vector<int> ranks) {
  RetrievalMetrics m;
  const auto n = static_cast<double>(ranks.size());
  for (std::size_t k = 0; k < kRecallKs.size(); ++k) {
    const auto hits = std::count_if(ranks.begin(), ranks.end(),
                                    [&](int r) { return r <= kRecallKs[k]; });
    m.recall[k] = 100.0 * static_cast<double>(hits) / n;
  }
  std::sort(ranks.begin(), ranks.end());
  const std::size_t mid = ranks.size() / 2;
  m.median_rank = ranks.size() % 2 == 1 ? ranks[mid] : 0.5 * (ranks[mid - 1] + ranks[mid]);
  return m;
}

Mat normalise_rows(const Mat& m) {
  Mat out = m;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double n = out.row(r).norm();
    if (n > 0.0) out.row(r) /= n;
  }
  return out;
}

Mat stacked_positions(const Mat& table, const std::vector<int>& lengths, int prefix) {
  int total = 0;
  for (int n : lengths) total += n + prefix;
  Mat p = Mat::Zero(total, table.cols());
  int r = 0;
  for (int n : lengths) {
    p.middleRows(r + prefix, n) = table.topRows(n);
    r += n + prefix;
  }
  return p;
}

// 0.5 * sum(lv_q - lv_p + (e^lv_p + (mu_p - mu_q)^2) e^-lv_q - 1) / rows
Var kl_term(Var mu_p, Var lv_p, Var mu_q, Var lv_q) {
  Var num = nn::add(nn::exp(lv_p), nn::square(nn::sub(mu_p, mu_q)));
  Var ratio = nn::mul(num, nn::exp(nn::scale(lv_q, -1.0)));
  Var inner = nn::add_scalar(nn::add(nn::sub(lv_q, lv_p), ratio), -1.0);
  return nn::scale(nn::sum(inner), 0.5 / static_cast<double>(mu_p.rows()));
}

}  // namespace

RetrievalReport retrieval_metrics(const Mat& text, const Mat& traj) {
  if (text.rows() != traj.rows() || text.rows() < 1 || text.cols() != traj.cols()) {
    throw Error(ErrorCode::kShape, "retrieval_metrics: need equal, non-empty latent sets");
  }
  const Mat a = normalise_rows(text), b = normalise_rows(traj);
  return {summarise(ranks_for(a, b)), summarise(ranks_for(b, a))};
}

double gaussian_kl(const Mat& mu_p, const Mat& lv_p, const Mat& mu_q, const Mat& lv_q) {
  const auto v = (lv_q - lv_p).array() +
                 (lv_p.array().exp() + (mu_p - mu_q).array().square()) * (-lv_q.array()).exp() - 1.0;
  return 0.5 * v.sum();
}

double info_nce(const Mat& a, const Mat& b, double temperature) {
  const Mat s = normalise_rows(a) * normalise_rows(b).transpose() / temperature;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mr = s.row(i).maxCoeff(), mc = s.col(i).maxCoeff();
    acc += mr + std::log((s.row(i).array() - mr).exp().sum()) - s(i, i);
    acc += mc + std::log((s.col(i).array() - mc).exp().sum()) - s(i, i);
  }
  return 0.5 * acc / static_cast<double>(s.rows());
}

Clatr::Clatr(ClatrConfig cfg, std::size_t vocab_size) : cfg_(cfg), vocab_size_(vocab_size) {
  cfg_.validate();
  if (vocab_size_ == 0) throw Error(ErrorCode::kConfig, "clatr: empty vocabulary");
  build(cfg_.seed);
}

Clatr::Encoder Clatr::make_encoder(const std::string& name, nn::Rng& rng) {
  Encoder e;
  const int d = cfg_.hidden;
  e.dist_tokens = ps_.add(name + ".dist", nn::normal(2, d, 0.5, rng));
  for (int i = 0; i < cfg_.layers; ++i) {
    e.blocks.push_back(nn::EncoderBlock::make(ps_, name + ".blk" + std::to_string(i), d, cfg_.heads, rng));
  }
  e.norm = nn::Norm::make(ps_, name + ".norm", d);
  e.mu = nn::Linear::make(ps_, name + ".mu", d, cfg_.latent_dim, rng);
  e.logvar = nn::Linear::make(ps_, name + ".logvar", d, cfg_.latent_dim, rng);
  return e;
}

void Clatr::build(std::uint64_t seed) {
  nn::Rng rng(seed);
  const int d = cfg_.hidden;
  pos_table_ = nn::sinusoidal_table(static_cast<int>(kMaxFrames) + 8, d);
  x_in_ = nn::Linear::make(ps_, "traj.in", kFeatureDim, d, rng);
  tok_emb_ = ps_.add("text.tok", nn::normal(static_cast<Eigen::Index>(vocab_size_), d, 0.5, rng));
  traj_enc_ = make_encoder("traj", rng);
  text_enc_ = make_encoder("text", rng);
  z_in_ = nn::Linear::make(ps_, "dec.z", cfg_.latent_dim, d, rng);
  for (int i = 0; i < cfg_.layers; ++i) {
    dec_blocks_.push_back(nn::EncoderBlock::make(ps_, "dec.blk" + std::to_string(i), d, cfg_.heads, rng));
  }
  dec_norm_ = nn::Norm::make(ps_, "dec.norm", d);
  dec_out_ = nn::Linear::make(ps_, "dec.out", d, kFeatureDim, rng);
}

void Clatr::set_translation_scale(double s) {
  if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::kConfig, "clatr: bad translation scale");
  translation_scale_ = s;
}

std::pair<Var, Var> Clatr::run_encoder(Tape& t, const Encoder& enc, Var tokens,
                                       const std::vector<int>& lengths,
                                       const std::vector<std::vector<int>>& valid) const {
  // `tokens` holds each sequence's rows with two leading placeholder rows that
  // are replaced by the distribution tokens.
  const auto B = static_cast<int>(lengths.size());
  std::vector<int> order, seq_len, readout_mu, readout_lv;
  std::vector<std::vector<int>> seq_valid;
  const int dist_base = static_cast<int>(tokens.rows());
  int r = 0, s = 0;
  for (int i = 0; i < B; ++i) {
    order.push_back(dist_base);
    order.push_back(dist_base + 1);
    for (int k = 0; k < lengths[i]; ++k) order.push_back(r + 2 + k);
    std::vector<int> v{0, 1};
    for (int k : valid[i]) v.push_back(2 + k);
    seq_valid.push_back(std::move(v));
    seq_len.push_back(lengths[i] + 2);
    readout_mu.push_back(s);
    readout_lv.push_back(s + 1);
    r += lengths[i] + 2;
    s += lengths[i] + 2;
  }
  std::array<Var, 2> parts{tokens, t.param(enc.dist_tokens)};
  Var h = nn::gather_rows(nn::concat_rows(parts), std::move(order));
  const auto segs = nn::self_segments(seq_len, seq_valid);
  for (const auto& blk : enc.blocks) h = blk(t, h, segs, cfg_.dropout, 0.0);
  h = enc.norm(t, h);
  Var mu = enc.mu(t, nn::gather_rows(h, std::move(readout_mu)));
  Var lv = nn::clamp(enc.logvar(t, nn::gather_rows(h, std::move(readout_lv))), -30.0, 20.0);
  return {mu, lv};
}

std::pair<Var, Var> Clatr::encode_traj(Tape& t, std::span<const ClatrExample> xs) const {
  std::vector<int> len;
  std::vector<std::vector<int>> valid;
  int total = 0;
  for (const auto& e : xs) {
    const auto n = static_cast<int>(e.x.rows());
    if (n < 1 || n > static_cast<int>(kMaxFrames) || e.x.cols() != kFeatureDim) {
      throw Error(ErrorCode::kShape, "encode_traj: features must be N x 9 with 1 <= N <= 300");
    }
    if (!e.mask.empty() && e.mask.size() != static_cast<std::size_t>(n)) {
      throw Error(ErrorCode::kShape, "encode_traj: mask length mismatch");
    }
    std::vector<int> v;
    for (int k = 0; k < n; ++k) {
      if (e.mask.empty() || e.mask[k]) v.push_back(k);
    }
    if (v.empty()) throw Error(ErrorCode::kShape, "encode_traj: empty sequence");
    len.push_back(n);
    valid.push_back(std::move(v));
    total += n + 2;
  }
  if (xs.empty()) throw Error(ErrorCode::kShape, "encode_traj: empty batch");
  Mat in = Mat::Zero(total, kFeatureDim);
  int r = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    in.middleRows(r + 2, len[i]) = xs[i].x;
    in.block(r + 2, 6, len[i], 3) *= translation_scale_;
    r += len[i] + 2;
  }
  Var tok = nn::add(x_in_(t, t.constant(std::move(in))),
                    t.constant(stacked_positions(pos_table_, len, 2)));
  return run_encoder(t, traj_enc_, tok, len, valid);
}

std::pair<Var, Var> Clatr::encode_text(Tape& t, std::span<const ClatrExample> xs) const {
  if (xs.empty()) throw Error(ErrorCode::kShape, "encode_text: empty batch");
  std::vector<int> len, ids;
  std::vector<std::vector<int>> valid;
  for (const auto& e : xs) {
    if (e.tokens.empty()) throw Error(ErrorCode::kShape, "encode_text: empty sequence");
    const int n = std::min<int>(static_cast<int>(e.tokens.size()), static_cast<int>(kMaxFrames));
    ids.push_back(0);
    ids.push_back(0);  // placeholders for the distribution tokens
    for (int k = 0; k < n; ++k) {
      if (e.tokens[k] < 0 || static_cast<std::size_t>(e.tokens[k]) >= vocab_size_) {
        throw Error(ErrorCode::kInput, "encode_text: token id out of range");
      }
      ids.push_back(e.tokens[k]);
    }
    std::vector<int> v(n);
    std::iota(v.begin(), v.end(), 0);
    len.push_back(n);
    valid.push_back(std::move(v));
  }
  Var tok = nn::add(nn::gather_rows(t.param(tok_emb_), std::move(ids)),
                    t.constant(stacked_positions(pos_table_, len, 2)));
  return run_encoder(t, text_enc_, tok, len, valid);
}

Var Clatr::decode(Tape& t, Var z, const std::vector<int>& lengths,
                  const std::vector<std::vector<int>>& valid) const {
  const auto B = static_cast<int>(lengths.size());
  if (z.rows() != B || z.cols() != cfg_.latent_dim) {
    throw Error(ErrorCode::kShape, "decode: latent batch shape mismatch");
  }
  // Sequence per item: [z token; positional queries].
  Var zt = z_in_(t, z);
  const Mat pos = stacked_positions(pos_table_, lengths, 0);
  std::array<Var, 2> parts{zt, t.constant(pos)};
  Var big = nn::concat_rows(parts);
  std::vector<int> order, seq_len, back;
  std::vector<std::vector<int>> seq_valid;
  int r = 0, s = 0;
  for (int i = 0; i < B; ++i) {
    if (lengths[i] < 1 || lengths[i] > static_cast<int>(kMaxFrames)) {
      throw Error(ErrorCode::kShape, "decode: frame count must be in [1, 300]");
    }
    order.push_back(i);
    for (int k = 0; k < lengths[i]; ++k) {
      order.push_back(B + r + k);
      back.push_back(s + 1 + k);
    }
    std::vector<int> v{0};
    for (int k : valid[i]) v.push_back(1 + k);
    seq_valid.push_back(std::move(v));
    seq_len.push_back(lengths[i] + 1);
    r += lengths[i];
    s += lengths[i] + 1;
  }
  Var h = nn::gather_rows(big, std::move(order));
  const auto segs = nn::self_segments(seq_len, seq_valid);
  for (const auto& blk : dec_blocks_) h = blk(t, h, segs, cfg_.dropout, 0.0);
  return dec_out_(t, dec_norm_(t, nn::gather_rows(h, std::move(back))));
}

std::vector<LatentDist> Clatr::encode_traj(std::span<const ClatrExample> xs) const {
  Tape t(&ps_, false, 0);
  auto [mu, lv] = encode_traj(t, xs);
  std::vector<LatentDist> out;
  for (Eigen::Index i = 0; i < mu.rows(); ++i) out.push_back({mu.value().row(i), lv.value().row(i)});
  return out;
}

std::vector<LatentDist> Clatr::encode_text(std::span<const ClatrExample> xs) const {
  Tape t(&ps_, false, 0);
  auto [mu, lv] = encode_text(t, xs);
  std::vector<LatentDist> out;
  for (Eigen::Index i = 0; i < mu.rows(); ++i) out.push_back({mu.value().row(i), lv.value().row(i)});
  return out;
}

Mat Clatr::decode(const Mat& z, int n) const {
  Tape t(&ps_, false, 0);
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  Mat out = decode(t, t.constant(z), {n}, {v}).value();
  out.col(6) /= translation_scale_;
  out.col(7) /= translation_scale_;
  out.col(8) /= translation_scale_;
  return out;
}

std::pair<Var, ClatrLoss> Clatr::loss(Tape& t, std::span<const ClatrExample> batch,
                                      std::uint64_t eps_seed) const {
  const auto B = static_cast<int>(batch.size());
  if (B < 1) throw Error(ErrorCode::kShape, "clatr loss: empty batch");
  auto [mu_x, lv_x] = encode_traj(t, batch);
  auto [mu_c, lv_c] = encode_text(t, batch);

  nn::Rng rng(eps_seed);
  const Mat eps_x = nn::normal(B, cfg_.latent_dim, 1.0, rng);
  const Mat eps_c = nn::normal(B, cfg_.latent_dim, 1.0, rng);
  Var z_x = nn::add(mu_x, nn::mul_const(nn::exp(nn::scale(lv_x, 0.5)), eps_x));
  Var z_c = nn::add(mu_c, nn::mul_const(nn::exp(nn::scale(lv_c, 0.5)), eps_c));

  // Reconstruction of the trajectory from both latents through one decoder.
  std::vector<int> len;
  std::vector<std::vector<int>> valid;
  int total = 0;
  for (const auto& e : batch) {
    const auto n = static_cast<int>(e.x.rows());
    std::vector<int> v;
    for (int k = 0; k < n; ++k) {
      if (e.mask.empty() || e.mask[k]) v.push_back(k);
    }
    len.push_back(n);
    valid.push_back(std::move(v));
    total += n;
  }
  Mat target(total, kFeatureDim), w = Mat::Zero(total, kFeatureDim);
  int r = 0;
  for (int i = 0; i < B; ++i) {
    target.middleRows(r, len[i]) = batch[i].x;
    target.block(r, 6, len[i], 3) *= translation_scale_;
    const double wt = 1.0 / (static_cast<double>(B) * valid[i].size() * kFeatureDim);
    for (int k : valid[i]) w.row(r + k).setConstant(wt);
    r += len[i];
  }
  std::array<Var, 2> zs{z_x, z_c};
  std::vector<int> len2 = len;
  len2.insert(len2.end(), len.begin(), len.end());
  auto valid2 = valid;
  valid2.insert(valid2.end(), valid.begin(), valid.end());
  Var recon_out = decode(t, nn::concat_rows(zs), len2, valid2);
  Mat target2(2 * total, kFeatureDim), w2(2 * total, kFeatureDim);
  target2 << target, target;
  w2 << w, w;
  Var l_recon = nn::weighted_sum(nn::square(nn::sub(recon_out, t.constant(std::move(target2)))), w2);

  Mat zeros = Mat::Zero(B, cfg_.latent_dim);
  Var zero = t.constant(zeros);
  Var l_kl = nn::add(nn::add(kl_term(mu_x, lv_x, zero, zero), kl_term(mu_c, lv_c, zero, zero)),
                     nn::add(kl_term(mu_x, lv_x, mu_c, lv_c), kl_term(mu_c, lv_c, mu_x, lv_x)));
  Var l_lat = nn::scale(nn::sum(nn::square(nn::sub(z_x, z_c))), 1.0 / B);

  ClatrLoss br;
  br.weights = {cfg_.w_recon, cfg_.w_latent, cfg_.w_kl, cfg_.w_contrastive};
  Var total_v = nn::add(nn::add(nn::scale(l_recon, cfg_.w_recon), nn::scale(l_lat, cfg_.w_latent)),
                        nn::scale(l_kl, cfg_.w_kl));
  if (B >= 2) {
    Var s = nn::scale(nn::matmul_nt(nn::l2_normalize_rows(mu_c), nn::l2_normalize_rows(mu_x)),
                      1.0 / cfg_.temperature);
    Var diag = nn::weighted_sum(s, Mat::Identity(B, B));
    Var lse = nn::add(nn::sum(nn::logsumexp_rows(s)), nn::sum(nn::logsumexp_rows(nn::transpose(s))));
    Var l_nce = nn::scale(nn::sub(lse, nn::scale(diag, 2.0)), 0.5 / B);
    br.contrastive = l_nce.value()(0, 0);
    total_v = nn::add(total_v, nn::scale(l_nce, cfg_.w_contrastive));
  } else {
    br.contrastive_skipped = true;
  }
  br.recon = l_recon.value()(0, 0);
  br.latent = l_lat.value()(0, 0);
  br.kl = l_kl.value()(0, 0);
  br.total = total_v.value()(0, 0);
  return {total_v, br};
}

std::vector<ClatrTrainStep> Clatr::train(std::span<const ClatrExample> data,
                                         const std::function<void(const ClatrTrainStep&)>& on_step) {
  if (data.empty()) throw Error(ErrorCode::kInput, "train_clatr: empty dataset");
  nn::AdamWConfig oc;
  oc.lr = cfg_.lr;
  nn::AdamW adam(ps_, oc);
  nn::Rng rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t cursor = data.size();
  const auto bsz = std::min<std::size_t>(static_cast<std::size_t>(cfg_.batch), data.size());

  std::vector<ClatrTrainStep> curve;
  nn::GradBuffer grads(ps_);
  for (int step = 0; step < cfg_.steps; ++step) {
    std::vector<ClatrExample> batch;
    for (std::size_t b = 0; b < bsz; ++b) {
      if (cursor == data.size()) {
        std::shuffle(perm.begin(), perm.end(), rng);
        cursor = 0;
      }
      batch.push_back(data[perm[cursor++]]);
    }
    const std::uint64_t tape_seed = rng(), eps_seed = rng();
    Tape t(&ps_, true, tape_seed);
    auto [l, br] = loss(t, batch, eps_seed);
    const bool finite = std::isfinite(br.total) && std::isfinite(br.recon) &&
                        std::isfinite(br.latent) && std::isfinite(br.kl) &&
                        std::isfinite(br.contrastive);
    if (!finite) {
      std::ostringstream msg;
      msg << "non-finite clatr loss at step " << step << ": recon " << br.recon << ", latent "
          << br.latent << ", kl " << br.kl << ", contrastive " << br.contrastive;
      throw Error(ErrorCode::kNonFiniteLoss, msg.str());
    }
    t.backward(l);
    grads.zero();
    t.accumulate(grads);
    adam.step(ps_, grads);
    curve.push_back({step, br});
    if (on_step) on_step(curve.back());
  }
  return curve;
}

void Clatr::save(const std::filesystem::path& path, std::uint64_t vocab_hash) const {
  nlohmann::json h;
  h["config"] = {{"layers", cfg_.layers},         {"hidden", cfg_.hidden},
                 {"heads", cfg_.heads},           {"dropout", cfg_.dropout},
                 {"latent_dim", cfg_.latent_dim}, {"batch", cfg_.batch},
                 {"lr", cfg_.lr},                 {"w_recon", cfg_.w_recon},
                 {"w_latent", cfg_.w_latent},     {"w_kl", cfg_.w_kl},
                 {"w_contrastive", cfg_.w_contrastive},
                 {"temperature", cfg_.temperature},
                 {"steps", cfg_.steps},           {"seed", cfg_.seed}};
  h["vocab_size"] = vocab_size_;
  h["vocab_hash"] = std::to_string(vocab_hash);
  h["translation_scale"] = translation_scale_;
  save_checkpoint(path, "clatr", h, ps_);
}

Clatr Clatr::load(const std::filesystem::path& path, std::uint64_t vocab_hash) {
  const auto h = read_checkpoint_header(path);
  try {
    if (h.at("kind") != "clatr") throw Error(ErrorCode::kFormat, "not a clatr checkpoint");
    if (h.at("vocab_hash").get<std::string>() != std::to_string(vocab_hash)) {
      throw Error(ErrorCode::kFormat, "checkpoint vocabulary hash does not match");
    }
    const auto& c = h.at("config");
    ClatrConfig cfg;
    cfg.layers = c.at("layers");
    cfg.hidden = c.at("hidden");
    cfg.heads = c.at("heads");
    cfg.dropout = c.at("dropout");
    cfg.latent_dim = c.at("latent_dim");
    cfg.batch = c.at("batch");
    cfg.lr = c.at("lr");
    cfg.w_recon = c.at("w_recon");
    cfg.w_latent = c.at("w_latent");
    cfg.w_kl = c.at("w_kl");
    cfg.w_contrastive = c.at("w_contrastive");
    cfg.temperature = c.at("temperature");
    cfg.steps = c.at("steps");
    cfg.seed = c.at("seed");
    Clatr m(cfg, h.at("vocab_size").get<std::size_t>());
    m.set_translation_scale(h.at("translation_scale"));
    load_checkpoint(path, "clatr", m.ps_);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("clatr checkpoint header: ") + e.what());
  }
}

}  // namespace cinetraj
