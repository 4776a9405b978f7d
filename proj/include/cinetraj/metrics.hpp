#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cinetraj/geom.hpp"
#include "cinetraj/nn/tape.hpp"
#include "cinetraj/tagging.hpp"

namespace cinetraj {

class Clatr;

/// Ridge added to both covariances when a set has fewer than dim + 1 rows.
inline constexpr double kFdRidge = 1e-6;

/// Frechet distance between Gaussians fitted to the rows of a and b.
double frechet_distance(const nn::Mat& a, const nn::Mat& b);

struct Prdc {
  double precision = 0, recall = 0, density = 0, coverage = 0;
};
/// Manifold precision/recall/density/coverage with k-NN balls (self
/// excluded) and strict inclusion. Each set needs more than k rows.
Prdc prdc(const nn::Mat& real, const nn::Mat& gen, int k = 3);

struct ClatrScore {
  double score = 0;          // 100 * mean max(0, cos)
  std::size_t excluded = 0;  // pairs dropped for a zero vector
};
ClatrScore clatr_score(const nn::Mat& text, const nn::Mat& traj);

struct ClassifierScores {
  double precision = 0, recall = 0, f1 = 0;
};
using LabelSet = std::set<std::string>;

/// Distinct camera labels over the segments.
LabelSet label_set(std::span<const TagSegment> segs);

/// Tags each generated trajectory and scores its label set against the
/// prompt's, micro-averaged over samples.
ClassifierScores classifier_metrics(std::span<const LabelSet> prompt_tags,
                                    std::span<const CameraTrajectory> generated,
                                    const TagConfig& cfg);
/// Per-frame variant: every frame carries one label, so P = R = F1 = accuracy.
ClassifierScores classifier_metrics_frames(std::span<const std::vector<TagSegment>> prompt_segments,
                                           std::span<const CameraTrajectory> generated,
                                           const TagConfig& cfg);

struct MetricReport {
  double fd = 0;
  double precision = 0, recall = 0, density = 0, coverage = 0;
  double clatr_score = 0;
  double c_p = 0, c_r = 0, c_f1 = 0;
  int k = 3;

  nlohmann::json to_json() const;
};

struct EvalInputs {
  std::span<const CameraTrajectory> reference;  // real set for FD and PRDC
  std::span<const CameraTrajectory> generated;
  std::span<const std::vector<int>> prompt_tokens;  // paired with generated
  std::span<const LabelSet> prompt_tags;            // paired with generated
};

/// All metrics with CLaTr mean latents as the feature space.
MetricReport evaluate(const Clatr& model, const EvalInputs& in, const TagConfig& cfg, int k = 3);

}  // namespace cinetraj
