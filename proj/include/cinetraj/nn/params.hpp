#pragma once

#include <string>
#include <vector>

#include "cinetraj/nn/tape.hpp"

namespace cinetraj::nn {

/// Named parameter matrices in declaration order.
class ParamStore {
 public:
  int add(std::string name, Mat value);

  std::size_t size() const { return values_.size(); }
  const std::string& name(int i) const { return names_.at(i); }
  const Mat& value(int i) const { return values_.at(i); }
  Mat& value(int i) { return values_.at(i); }
  std::size_t total_scalars() const;
  int find(const std::string& name) const;

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
};

Mat xavier_uniform(Eigen::Index in, Eigen::Index out, Rng& rng);
Mat normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);

/// Fixed sinusoidal table: row p holds [sin(p f_k), cos(p f_k)].
Mat sinusoidal_table(int positions, int dim);
/// Sinusoidal features of one scalar; dim must be even.
Mat sinusoidal_features(double x, int dim);

}  // namespace cinetraj::nn
