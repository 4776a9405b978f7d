#include "cinetraj/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "cinetraj/clatr.hpp"
#include "cinetraj/director.hpp"
#include "cinetraj/error.hpp"

namespace cinetraj {
namespace {

using nn::Mat;
using Dense = Eigen::MatrixXd;

void check_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) throw Error(ErrorCode::kInput, std::string(what) + ": non-finite features");
}

void moments(const Mat& x, Eigen::VectorXd& mu, Dense& cov) {
  mu = x.colwise().mean().transpose();
  const Dense c = x.rowwise() - mu.transpose();
  cov = c.transpose() * c / static_cast<double>(std::max<Eigen::Index>(x.rows() - 1, 1));
  if (x.rows() < x.cols() + 1) cov.diagonal().array() += kFdRidge;
}

// Symmetric PSD square root with negative eigenvalues clipped to 0.
Dense psd_sqrt(const Dense& m) {
  Eigen::SelfAdjointEigenSolver<Dense> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Dense pairwise(const Mat& a, const Mat& b) {
  Dense d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) d(i, j) = (a.row(i) - b.row(j)).norm();
  }
  return d;
}

// Distance from each row to its k-th nearest other row.
Eigen::VectorXd knn_radii(const Dense& self_dist, int k) {
  const auto n = self_dist.rows();
  Eigen::VectorXd r(n);
  std::vector<double> row;
  for (Eigen::Index i = 0; i < n; ++i) {
    row.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) row.push_back(self_dist(i, j));
    }
    std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
    r[i] = row[k - 1];
  }
  return r;
}

ClassifierScores micro(std::size_t tp, std::size_t fp, std::size_t fn) {
  ClassifierScores s;
  s.precision = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  s.recall = tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

}  // namespace

double frechet_distance(const Mat& a, const Mat& b) {
  if (a.rows() < 1 || b.rows() < 1 || a.cols() != b.cols()) {
    throw Error(ErrorCode::kShape, "frechet_distance: empty sets or dimension mismatch");
  }
  check_finite(a, "frechet_distance");
  check_finite(b, "frechet_distance");
  Eigen::VectorXd mu_a, mu_b;
  Dense ca, cb;
  moments(a, mu_a, ca);
  moments(b, mu_b, cb);
  if (!ca.allFinite() || !cb.allFinite()) throw Error(ErrorCode::kInput, "frechet_distance: non-finite covariance");
  // tr sqrt(Ca Cb) = tr sqrt(Ca^1/2 Cb Ca^1/2), and the latter is symmetric.
  const Dense ra = psd_sqrt(ca);
  const double cross = psd_sqrt(ra * cb * ra).trace();
  const double fd = (mu_a - mu_b).squaredNorm() + ca.trace() + cb.trace() - 2.0 * cross;
  return std::max(fd, 0.0);
}

Prdc prdc(const Mat& real, const Mat& gen, int k) {
  if (k < 1) throw Error(ErrorCode::kConfig, "prdc: k must be positive");
  if (real.rows() <= k || gen.rows() <= k) {
    throw Error(ErrorCode::kConfig, "prdc: each set needs more than k = " + std::to_string(k) + " points");
  }
  if (real.cols() != gen.cols()) throw Error(ErrorCode::kShape, "prdc: dimension mismatch");
  const Eigen::VectorXd r_real = knn_radii(pairwise(real, real), k);
  const Eigen::VectorXd r_gen = knn_radii(pairwise(gen, gen), k);
  const Dense d = pairwise(real, gen);  // real x gen
  const auto n = real.rows(), m = gen.rows();

  Prdc out;
  std::size_t inside = 0, covered = 0, recalled = 0;
  double balls = 0;
  for (Eigen::Index j = 0; j < m; ++j) {
    int count = 0;
    for (Eigen::Index i = 0; i < n; ++i) count += d(i, j) < r_real[i];
    inside += count > 0;
    balls += count;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    bool cov = false, rec = false;
    for (Eigen::Index j = 0; j < m; ++j) {
      cov = cov || d(i, j) < r_real[i];
      rec = rec || d(i, j) < r_gen[j];
    }
    covered += cov;
    recalled += rec;
  }
  out.precision = static_cast<double>(inside) / static_cast<double>(m);
  out.density = balls / (static_cast<double>(k) * static_cast<double>(m));
  out.coverage = static_cast<double>(covered) / static_cast<double>(n);
  out.recall = static_cast<double>(recalled) / static_cast<double>(n);
  return out;
}

ClatrScore clatr_score(const Mat& text, const Mat& traj) {
  if (text.rows() != traj.rows() || text.cols() != traj.cols()) {
    throw Error(ErrorCode::kShape, "clatr_score: sets must be paired");
  }
  ClatrScore s;
  double sum = 0;
  std::size_t used = 0;
  for (Eigen::Index i = 0; i < text.rows(); ++i) {
    const double na = text.row(i).norm(), nb = traj.row(i).norm();
    if (na == 0.0 || nb == 0.0) {
      ++s.excluded;
      continue;
    }
    sum += std::max(0.0, text.row(i).dot(traj.row(i)) / (na * nb));
    ++used;
  }
  s.score = used ? 100.0 * sum / static_cast<double>(used) : 0.0;
  return s;
}

LabelSet label_set(std::span<const TagSegment> segs) {
  LabelSet s;
  for (const auto& g : segs) s.insert(g.label);
  return s;
}

ClassifierScores classifier_metrics(std::span<const LabelSet> prompt_tags,
                                    std::span<const CameraTrajectory> generated,
                                    const TagConfig& cfg) {
  if (prompt_tags.size() != generated.size()) {
    throw Error(ErrorCode::kShape, "classifier_metrics: prompt and generation counts differ");
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const LabelSet got = label_set(tag_camera(generated[i], cfg));
    const LabelSet& want = prompt_tags[i];
    for (const auto& l : got) (want.count(l) ? tp : fp)++;
    for (const auto& l : want) fn += got.count(l) == 0;
  }
  return micro(tp, fp, fn);
}

ClassifierScores classifier_metrics_frames(std::span<const std::vector<TagSegment>> prompt_segments,
                                           std::span<const CameraTrajectory> generated,
                                           const TagConfig& cfg) {
  if (prompt_segments.size() != generated.size()) {
    throw Error(ErrorCode::kShape, "classifier_metrics: prompt and generation counts differ");
  }
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const auto got = tag_camera(generated[i], cfg);
    for (const auto& g : got) {
      for (std::size_t f = g.start; f <= g.end; ++f) {
        ++total;
        for (const auto& w : prompt_segments[i]) {
          if (f >= w.start && f <= w.end) {
            hit += w.label == g.label;
            break;
          }
        }
      }
    }
  }
  return micro(hit, total - hit, total - hit);
}

nlohmann::json MetricReport::to_json() const {
  return {{"fd", fd},           {"precision", precision}, {"recall", recall},
          {"density", density}, {"coverage", coverage},   {"clatr_score", clatr_score},
          {"c_p", c_p},         {"c_r", c_r},             {"c_f1", c_f1},
          {"k", k}};
}

namespace {

Mat traj_latents(const Clatr& model, std::span<const CameraTrajectory> trajs) {
  Mat out(static_cast<Eigen::Index>(trajs.size()), model.config().latent_dim);
  constexpr std::size_t kChunk = 64;
  for (std::size_t s = 0; s < trajs.size(); s += kChunk) {
    std::vector<ClatrExample> xs;
    for (std::size_t i = s; i < std::min(trajs.size(), s + kChunk); ++i) {
      xs.push_back({trajectory_features(trajs[i]), trajs[i].mask, {}});
    }
    const auto d = model.encode_traj(xs);
    for (std::size_t i = 0; i < d.size(); ++i) out.row(static_cast<Eigen::Index>(s + i)) = d[i].mu;
  }
  return out;
}

Mat text_latents(const Clatr& model, std::span<const std::vector<int>> tokens) {
  Mat out(static_cast<Eigen::Index>(tokens.size()), model.config().latent_dim);
  constexpr std::size_t kChunk = 64;
  for (std::size_t s = 0; s < tokens.size(); s += kChunk) {
    std::vector<ClatrExample> xs;
    for (std::size_t i = s; i < std::min(tokens.size(), s + kChunk); ++i) xs.push_back({Mat(), {}, tokens[i]});
    const auto d = model.encode_text(xs);
    for (std::size_t i = 0; i < d.size(); ++i) out.row(static_cast<Eigen::Index>(s + i)) = d[i].mu;
  }
  return out;
}

}  // namespace

MetricReport evaluate(const Clatr& model, const EvalInputs& in, const TagConfig& cfg, int k) {
  if (in.prompt_tokens.size() != in.generated.size() || in.prompt_tags.size() != in.generated.size()) {
    throw Error(ErrorCode::kShape, "evaluate: prompts and generations must be paired");
  }
  const Mat real = traj_latents(model, in.reference);
  const Mat gen = traj_latents(model, in.generated);
  const Mat text = text_latents(model, in.prompt_tokens);
  MetricReport r;
  r.k = k;
  r.fd = frechet_distance(real, gen);
  const Prdc p = prdc(real, gen, k);
  r.precision = p.precision;
  r.recall = p.recall;
  r.density = p.density;
  r.coverage = p.coverage;
  r.clatr_score = clatr_score(text, gen).score;
  const auto c = classifier_metrics(in.prompt_tags, in.generated, cfg);
  r.c_p = c.precision;
  r.c_r = c.recall;
  r.c_f1 = c.f1;
  return r;
}

}  // namespace cinetraj
