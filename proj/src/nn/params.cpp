#include "cinetraj/nn/params.hpp"

#include <cmath>

#include "cinetraj/error.hpp"

namespace cinetraj::nn {

int ParamStore::add(std::string name, Mat value) {
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return static_cast<int>(values_.size() - 1);
}

std::size_t ParamStore::total_scalars() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

int ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<int>(i);
  }
  return -1;
}

Mat xavier_uniform(Eigen::Index in, Eigen::Index out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-a, a);
  Mat m(in, out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Mat normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> g(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

Mat sinusoidal_table(int positions, int dim) {
  Mat t(positions, dim);
  const int half = dim / 2;
  for (int p = 0; p < positions; ++p) {
    for (int k = 0; k < half; ++k) {
      const double f = std::exp(-std::log(10000.0) * k / std::max(half, 1));
      t(p, k) = std::sin(p * f);
      t(p, half + k) = std::cos(p * f);
    }
    if (dim % 2 == 1) t(p, dim - 1) = 0.0;
  }
  return t;
}

Mat sinusoidal_features(double x, int dim) {
  if (dim % 2 != 0) throw Error(ErrorCode::kConfig, "sinusoidal_features: dim must be even");
  Mat t(1, dim);
  const int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    const double f = std::exp(-std::log(10000.0) * k / half);
    t(0, k) = std::cos(x * f);
    t(0, half + k) = std::sin(x * f);
  }
  return t;
}

}  // namespace cinetraj::nn
