#include "cinetraj/nn/tape.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "cinetraj/error.hpp"
#include "cinetraj/nn/params.hpp"

namespace cinetraj::nn {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::kShape, std::string("nn: ") + what);
}

void same_shape(Var a, Var b, const char* op) {
  require(a.tape == b.tape, "operands recorded on different tapes");
  require(a.rows() == b.rows() && a.cols() == b.cols(), op);
}

}  // namespace

const Mat& Var::value() const { return tape->value(*this); }

GradBuffer::GradBuffer(const ParamStore& params) {
  grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& v = params.value(static_cast<int>(i));
    grads.push_back(Mat::Zero(v.rows(), v.cols()));
  }
}

void GradBuffer::zero() {
  for (auto& g : grads) g.setZero();
}

void GradBuffer::add(const GradBuffer& other) {
  for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += other.grads[i];
}

void GradBuffer::scale(double s) {
  for (auto& g : grads) g *= s;
}

double GradBuffer::squared_norm() const {
  double n = 0.0;
  for (const auto& g : grads) n += g.squaredNorm();
  return n;
}

Tape::Tape(const ParamStore* params, bool training, std::uint64_t seed)
    : params_(params), training_(training), rng_(seed) {
  if (params_) param_node_.assign(params_->size(), -1);
}

Var Tape::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(int index) {
  require(params_ != nullptr && index >= 0 && index < static_cast<int>(param_node_.size()),
          "unknown parameter");
  if (param_node_[index] >= 0) return {this, param_node_[index]};
  Node n;
  n.value = params_->value(index);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  param_node_[index] = id;
  param_leaves_.emplace_back(index, id);
  return {this, id};
}

Var Tape::push(Mat value, std::initializer_list<Var> parents, Backward backward) {
  return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
              std::move(backward));
}

Var Tape::push(Mat value, std::span<const Var> parents, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    require(p.tape == this, "operand recorded on a different tape");
    n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Mat& Tape::grad_acc(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

const Mat& Tape::grad(Var v) { return grad_acc(v.id); }

void Tape::backward(Var root) {
  require(root.tape == this, "root on a different tape");
  require(value(root).size() == 1, "backward needs a scalar root");
  grad_acc(root.id).setOnes();
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() != 0) n.backward(*this, id);
  }
}

void Tape::accumulate(GradBuffer& out) const {
  for (const auto& [index, id] : param_leaves_) {
    const Mat& g = nodes_[id].grad;
    if (g.size() != 0) out.grads[index] += g;
  }
}

// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  same_shape(a, b, "add: shape mismatch");
  return a.tape->push(a.value() + b.value(), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    if (t.needs_grad(a.id)) t.grad_acc(a.id) += g;
    if (t.needs_grad(b.id)) t.grad_acc(b.id) += g;
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub: shape mismatch");
  return a.tape->push(a.value() - b.value(), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    if (t.needs_grad(a.id)) t.grad_acc(a.id) += g;
    if (t.needs_grad(b.id)) t.grad_acc(b.id) -= g;
  });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul: shape mismatch");
  return a.tape->push(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    if (t.needs_grad(a.id)) t.grad_acc(a.id) += g.cwiseProduct(t.value(b));
    if (t.needs_grad(b.id)) t.grad_acc(b.id) += g.cwiseProduct(t.value(a));
  });
}

Var scale(Var a, double s) {
  return a.tape->push(a.value() * s, {a}, [a, s](Tape& t, int self) {
    t.grad_acc(a.id) += t.grad_of(self) * s;
  });
}

Var add_scalar(Var a, double s) {
  return a.tape->push((a.value().array() + s).matrix(), {a}, [a](Tape& t, int self) {
    t.grad_acc(a.id) += t.grad_of(self);
  });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row shape mismatch");
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape->push(std::move(out), {a, row}, [a, row](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    if (t.needs_grad(a.id)) t.grad_acc(a.id) += g;
    if (t.needs_grad(row.id)) t.grad_acc(row.id) += g.colwise().sum();
  });
}

Var mul_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "mul_row: row shape mismatch");
  Mat out = a.value().array().rowwise() * row.value().row(0).array();
  return a.tape->push(std::move(out), {a, row}, [a, row](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    if (t.needs_grad(a.id)) {
      t.grad_acc(a.id) += (g.array().rowwise() * t.value(row).row(0).array()).matrix();
    }
    if (t.needs_grad(row.id)) {
      t.grad_acc(row.id) += g.cwiseProduct(t.value(a)).colwise().sum();
    }
  });
}

Var mul_const(Var a, const Mat& c) {
  require(c.rows() == a.rows() && c.cols() == a.cols(), "mul_const: shape mismatch");
  auto cc = std::make_shared<Mat>(c);
  return a.tape->push(a.value().cwiseProduct(c), {a}, [a, cc](Tape& t, int self) {
    t.grad_acc(a.id) += t.grad_of(self).cwiseProduct(*cc);
  });
}

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Mat out;
  out.noalias() = a.value() * b.value();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    if (t.needs_grad(a.id)) t.grad_acc(a.id).noalias() += g * t.value(b).transpose();
    if (t.needs_grad(b.id)) t.grad_acc(b.id).noalias() += t.value(a).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Mat out;
  out.noalias() = a.value() * b.value().transpose();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    if (t.needs_grad(a.id)) t.grad_acc(a.id).noalias() += g * t.value(b);
    if (t.needs_grad(b.id)) t.grad_acc(b.id).noalias() += g.transpose() * t.value(a);
  });
}

Var transpose(Var a) {
  return a.tape->push(a.value().transpose(), {a}, [a](Tape& t, int self) {
    t.grad_acc(a.id) += t.grad_of(self).transpose();
  });
}

Var linear(Var x, Var w, Var b) {
  require(x.cols() == w.rows(), "linear: input width mismatch");
  require(b.rows() == 1 && b.cols() == w.cols(), "linear: bias shape mismatch");
  Mat out;
  out.noalias() = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return x.tape->push(std::move(out), {x, w, b}, [x, w, b](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    if (t.needs_grad(x.id)) t.grad_acc(x.id).noalias() += g * t.value(w).transpose();
    if (t.needs_grad(w.id)) t.grad_acc(w.id).noalias() += t.value(x).transpose() * g;
    if (t.needs_grad(b.id)) t.grad_acc(b.id) += g.colwise().sum();
  });
}

Var gelu(Var a) {
  const Mat& x = a.value();
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  }
  return a.tape->push(std::move(out), {a}, [a](Tape& t, int self) {
    const Mat& x = t.value(a);
    const Mat& g = t.grad_of(self);
    Mat& ga = t.grad_acc(a.id);
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      ga.data()[i] += g.data()[i] * (cdf + v * pdf);
    }
  });
}

Var silu(Var a) {
  const Mat& x = a.value();
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = v / (1.0 + std::exp(-v));
  }
  return a.tape->push(std::move(out), {a}, [a](Tape& t, int self) {
    const Mat& x = t.value(a);
    const Mat& g = t.grad_of(self);
    Mat& ga = t.grad_acc(a.id);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      const double s = 1.0 / (1.0 + std::exp(-v));
      ga.data()[i] += g.data()[i] * (s * (1.0 + v * (1.0 - s)));
    }
  });
}

Var exp(Var a) {
  Mat out = a.value().array().exp().matrix();
  return a.tape->push(std::move(out), {a}, [a](Tape& t, int self) {
    t.grad_acc(a.id) += t.grad_of(self).cwiseProduct(t.value(Var{&t, self}));
  });
}

Var square(Var a) {
  return a.tape->push(a.value().array().square().matrix(), {a}, [a](Tape& t, int self) {
    t.grad_acc(a.id) += 2.0 * t.grad_of(self).cwiseProduct(t.value(a));
  });
}

Var clamp(Var a, double lo, double hi) {
  Mat out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape->push(std::move(out), {a}, [a, lo, hi](Tape& t, int self) {
    const Mat& x = t.value(a);
    const Mat& g = t.grad_of(self);
    Mat& ga = t.grad_acc(a.id);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      if (v >= lo && v <= hi) ga.data()[i] += g.data()[i];
    }
  });
}

Var layer_norm(Var x, double eps) {
  const Mat& v = x.value();
  const Eigen::Index n = v.rows(), d = v.cols();
  Mat out(n, d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = v.row(r).mean();
    const double var = (v.row(r).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(r) = is;
    out.row(r) = (v.row(r).array() - mu) * is;
  }
  return x.tape->push(std::move(out), {x}, [x, inv_std](Tape& t, int self) {
    const Mat& y = t.value(Var{&t, self});
    const Mat& g = t.grad_of(self);
    Mat& gx = t.grad_acc(x.id);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double mg = g.row(r).mean();
      const double mgy = g.row(r).dot(y.row(r)) / static_cast<double>(y.cols());
      gx.row(r).array() += (*inv_std)(r) * (g.row(r).array() - mg - y.row(r).array() * mgy);
    }
  });
}

Var modulate(Var x, Var gamma, Var beta) {
  same_shape(x, gamma, "modulate: gamma shape mismatch");
  same_shape(x, beta, "modulate: beta shape mismatch");
  Mat out = x.value().cwiseProduct((gamma.value().array() + 1.0).matrix()) + beta.value();
  return x.tape->push(std::move(out), {x, gamma, beta}, [x, gamma, beta](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    if (t.needs_grad(x.id)) {
      t.grad_acc(x.id) += g.cwiseProduct((t.value(gamma).array() + 1.0).matrix());
    }
    if (t.needs_grad(gamma.id)) t.grad_acc(gamma.id) += g.cwiseProduct(t.value(x));
    if (t.needs_grad(beta.id)) t.grad_acc(beta.id) += g;
  });
}

Var adaln(Var x, Var gamma, Var beta) { return modulate(layer_norm(x), gamma, beta); }

Var l2_normalize_rows(Var a, double eps) {
  const Mat& v = a.value();
  auto norms = std::make_shared<Eigen::VectorXd>(v.rows());
  Mat out(v.rows(), v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    (*norms)(r) = std::max(v.row(r).norm(), eps);
    out.row(r) = v.row(r) / (*norms)(r);
  }
  return a.tape->push(std::move(out), {a}, [a, norms](Tape& t, int self) {
    const Mat& y = t.value(Var{&t, self});
    const Mat& g = t.grad_of(self);
    Mat& ga = t.grad_acc(a.id);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double proj = g.row(r).dot(y.row(r));
      ga.row(r) += (g.row(r) - proj * y.row(r)) / (*norms)(r);
    }
  });
}

Var logsumexp_rows(Var a) {
  const Mat& v = a.value();
  Mat out(v.rows(), 1);
  auto probs = std::make_shared<Mat>(v.rows(), v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    const Eigen::RowVectorXd e = (v.row(r).array() - m).exp().matrix();
    const double s = e.sum();
    out(r, 0) = m + std::log(s);
    probs->row(r) = e / s;
  }
  return a.tape->push(std::move(out), {a}, [a, probs](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    Mat& ga = t.grad_acc(a.id);
    for (Eigen::Index r = 0; r < ga.rows(); ++r) ga.row(r) += g(r, 0) * probs->row(r);
  });
}

Var sum(Var a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->push(std::move(out), {a}, [a](Tape& t, int self) {
    t.grad_acc(a.id).array() += t.grad_of(self)(0, 0);
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var weighted_sum(Var a, const Mat& w) {
  require(w.rows() == a.rows() && w.cols() == a.cols(), "weighted_sum: shape mismatch");
  Mat out(1, 1);
  out(0, 0) = a.value().cwiseProduct(w).sum();
  auto wc = std::make_shared<Mat>(w);
  return a.tape->push(std::move(out), {a}, [a, wc](Tape& t, int self) {
    t.grad_acc(a.id) += t.grad_of(self)(0, 0) * *wc;
  });
}

Var gather_rows(Var x, std::vector<int> index) {
  const Mat& v = x.value();
  Mat out(static_cast<Eigen::Index>(index.size()), v.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    require(index[r] >= 0 && index[r] < v.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = v.row(index[r]);
  }
  auto idx = std::make_shared<std::vector<int>>(std::move(index));
  return x.tape->push(std::move(out), {x}, [x, idx](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    Mat& gx = t.grad_acc(x.id);
    for (std::size_t r = 0; r < idx->size(); ++r) {
      gx.row((*idx)[r]) += g.row(static_cast<Eigen::Index>(r));
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: nothing to concatenate");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows: width mismatch");
    rows += p.rows();
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape->push(std::move(out), parts, [ps](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    Eigen::Index r = 0;
    for (const Var& p : ps) {
      const Eigen::Index n = t.value(p).rows();
      if (t.needs_grad(p.id)) t.grad_acc(p.id) += g.middleRows(r, n);
      r += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: nothing to concatenate");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0].rows();
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols: height mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape->push(std::move(out), parts, [ps](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    Eigen::Index c = 0;
    for (const Var& p : ps) {
      const Eigen::Index n = t.value(p).cols();
      if (t.needs_grad(p.id)) t.grad_acc(p.id) += g.middleCols(c, n);
      c += n;
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Mat out = a.value().middleCols(start, count);
  return a.tape->push(std::move(out), {a}, [a, start, count](Tape& t, int self) {
    t.grad_acc(a.id).middleCols(start, count) += t.grad_of(self);
  });
}

Var pool_rows(Var x, std::vector<std::vector<int>> groups) {
  const Mat& v = x.value();
  Mat out = Mat::Zero(static_cast<Eigen::Index>(groups.size()), v.cols());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    require(!groups[gi].empty(), "pool_rows: empty group");
    for (int r : groups[gi]) out.row(static_cast<Eigen::Index>(gi)) += v.row(r);
    out.row(static_cast<Eigen::Index>(gi)) /= static_cast<double>(groups[gi].size());
  }
  auto gs = std::make_shared<std::vector<std::vector<int>>>(std::move(groups));
  return x.tape->push(std::move(out), {x}, [x, gs](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    Mat& gx = t.grad_acc(x.id);
    for (std::size_t gi = 0; gi < gs->size(); ++gi) {
      const double w = 1.0 / static_cast<double>((*gs)[gi].size());
      for (int r : (*gs)[gi]) gx.row(r) += w * g.row(static_cast<Eigen::Index>(gi));
    }
  });
}

Var dropout(Var a, double p) {
  Tape& tape = *a.tape;
  if (!tape.training() || p <= 0.0) return a;
  std::bernoulli_distribution keep(1.0 - p);
  Mat m(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(tape.rng()) ? 1.0 / (1.0 - p) : 0.0;
  return mul_const(a, m);
}

Var attention(Var q, Var k, Var v, int heads, std::vector<AttentionSegment> segments) {
  require(q.cols() == k.cols() && k.cols() == v.cols() && k.rows() == v.rows(),
          "attention: q/k/v shape mismatch");
  require(heads > 0 && q.cols() % heads == 0, "attention: width not divisible by heads");
  const Eigen::Index dh = q.cols() / heads;
  const double scale_f = 1.0 / std::sqrt(static_cast<double>(dh));
  const Mat& qv = q.value();
  const Mat& kv = k.value();
  const Mat& vv = v.value();

  // Softmax weights per (segment, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<Mat>>();
  probs->reserve(segments.size() * heads);
  Mat out = Mat::Zero(qv.rows(), qv.cols());
  for (const auto& seg : segments) {
    require(seg.q_begin >= 0 && seg.q_begin + seg.q_len <= qv.rows(), "attention: bad segment");
    const auto nk = static_cast<Eigen::Index>(seg.keys.size());
    Mat kc(nk, kv.cols()), vc(nk, vv.cols());
    for (Eigen::Index j = 0; j < nk; ++j) {
      require(seg.keys[j] >= 0 && seg.keys[j] < kv.rows(), "attention: key out of range");
      kc.row(j) = kv.row(seg.keys[j]);
      vc.row(j) = vv.row(seg.keys[j]);
    }
    for (int h = 0; h < heads; ++h) {
      if (nk == 0) {
        probs->emplace_back();
        continue;
      }
      Mat s;
      s.noalias() = qv.block(seg.q_begin, h * dh, seg.q_len, dh) *
                    kc.middleCols(h * dh, dh).transpose();
      s *= scale_f;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      out.block(seg.q_begin, h * dh, seg.q_len, dh).noalias() = s * vc.middleCols(h * dh, dh);
      probs->push_back(std::move(s));
    }
  }
  auto segs = std::make_shared<std::vector<AttentionSegment>>(std::move(segments));
  return q.tape->push(std::move(out), {q, k, v}, [q, k, v, heads, dh, scale_f, probs, segs](
                                                     Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    const Mat& qv = t.value(q);
    const Mat& kv = t.value(k);
    const Mat& vv = t.value(v);
    const bool need_q = t.needs_grad(q.id);
    const bool need_k = t.needs_grad(k.id);
    const bool need_v = t.needs_grad(v.id);
    std::size_t pi = 0;
    for (const auto& seg : *segs) {
      const auto nk = static_cast<Eigen::Index>(seg.keys.size());
      if (nk == 0) {
        pi += heads;
        continue;
      }
      Mat kc(nk, kv.cols()), vc(nk, vv.cols());
      for (Eigen::Index j = 0; j < nk; ++j) {
        kc.row(j) = kv.row(seg.keys[j]);
        vc.row(j) = vv.row(seg.keys[j]);
      }
      Mat gk = Mat::Zero(nk, kv.cols()), gv = Mat::Zero(nk, vv.cols());
      for (int h = 0; h < heads; ++h, ++pi) {
        const Mat& p = (*probs)[pi];
        const auto go = g.block(seg.q_begin, h * dh, seg.q_len, dh);
        if (need_v) gv.middleCols(h * dh, dh).noalias() += p.transpose() * go;
        Mat gp;
        gp.noalias() = go * vc.middleCols(h * dh, dh).transpose();
        Mat gs = p.cwiseProduct(gp);
        const Eigen::VectorXd rs = gs.rowwise().sum();
        gs -= p.cwiseProduct(rs.replicate(1, p.cols()));
        gs *= scale_f;
        if (need_q) {
          t.grad_acc(q.id).block(seg.q_begin, h * dh, seg.q_len, dh).noalias() +=
              gs * kc.middleCols(h * dh, dh);
        }
        if (need_k) {
          gk.middleCols(h * dh, dh).noalias() +=
              gs.transpose() * qv.block(seg.q_begin, h * dh, seg.q_len, dh);
        }
      }
      for (Eigen::Index j = 0; j < nk; ++j) {
        if (need_k) t.grad_acc(k.id).row(seg.keys[j]) += gk.row(j);
        if (need_v) t.grad_acc(v.id).row(seg.keys[j]) += gv.row(j);
      }
    }
  });
}

}  // namespace cinetraj::nn
