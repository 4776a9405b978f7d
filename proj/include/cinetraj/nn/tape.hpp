#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace cinetraj::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

class Tape;
class ParamStore;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Per-parameter gradient accumulators, parallel to a ParamStore.
struct GradBuffer {
  std::vector<Mat> grads;

  explicit GradBuffer(const ParamStore& params);
  void zero();
  void add(const GradBuffer& other);
  void scale(double s);
  double squared_norm() const;
};

/// Records a computation for one reverse sweep. Nodes are kept in creation
/// order, which is a valid topological order.
class Tape {
 public:
  explicit Tape(const ParamStore* params = nullptr, bool training = false, std::uint64_t seed = 0);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  /// Leaf for a trainable parameter; created once per tape.
  Var param(int index);

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of a node after backward(); zero-filled if never reached.
  const Mat& grad(Var v);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and sweeps backwards.
  void backward(Var root);
  /// Adds the gradients that reached parameter leaves.
  void accumulate(GradBuffer& out) const;

  bool training() const { return training_; }
  Rng& rng() { return rng_; }
  std::size_t size() const { return nodes_.size(); }

  // Building blocks for ops.
  using Backward = std::function<void(Tape&, int self)>;
  Var push(Mat value, std::initializer_list<Var> parents, Backward backward);
  Var push(Mat value, std::span<const Var> parents, Backward backward);
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  /// Gradient accumulator of `id`, allocated on first use.
  Mat& grad_acc(int id);
  const Mat& grad_of(int id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Backward backward;
  };

  const ParamStore* params_;
  bool training_;
  Rng rng_;
  std::deque<Node> nodes_;
  std::vector<int> param_node_;               // param index -> node id
  std::vector<std::pair<int, int>> param_leaves_;  // (param index, node id)
};

// Elementwise and structural ops. Shapes must agree unless stated.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// a (n x d) + row (1 x d), broadcast over rows.
Var add_row(Var a, Var row);
/// a (n x d) .* row (1 x d), broadcast over rows.
Var mul_row(Var a, Var row);
/// a .* c for a constant matrix c (no gradient to c).
Var mul_const(Var a, const Mat& c);
Var matmul(Var a, Var b);
/// a * b^T.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
/// x * w + b with w (in x out) and b (1 x out).
Var linear(Var x, Var w, Var b);
Var gelu(Var a);
Var silu(Var a);
Var exp(Var a);
Var square(Var a);
Var clamp(Var a, double lo, double hi);
/// Row-wise normalisation to zero mean and unit variance.
Var layer_norm(Var x, double eps = 1e-5);
/// x .* (1 + gamma) + beta, all of the same shape.
Var modulate(Var x, Var gamma, Var beta);
/// Adaptive layer norm: modulate(layer_norm(x), gamma, beta).
Var adaln(Var x, Var gamma, Var beta);
Var l2_normalize_rows(Var a, double eps = 1e-12);
/// n x 1 column of row-wise log-sum-exp.
Var logsumexp_rows(Var a);
Var sum(Var a);
Var mean(Var a);
/// Sum of a .* w for a constant weight matrix w, as 1 x 1.
Var weighted_sum(Var a, const Mat& w);
Var gather_rows(Var x, std::vector<int> index);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
/// One output row per group: the mean of the listed input rows.
Var pool_rows(Var x, std::vector<std::vector<int>> groups);
/// Inverted dropout; identity when the tape is not training or p == 0.
Var dropout(Var a, double p);

/// Query block [q_begin, q_begin + q_len) attends to key rows `keys`.
struct AttentionSegment {
  int q_begin = 0;
  int q_len = 0;
  std::vector<int> keys;
};

/// Multi-head scaled dot-product attention over independent segments.
/// q (Rq x d), k and v (Rk x d); d divisible by `heads`.
Var attention(Var q, Var k, Var v, int heads, std::vector<AttentionSegment> segments);

}  // namespace cinetraj::nn
