#include "cinetraj/nn/layers.hpp"

namespace cinetraj::nn {

Linear Linear::make(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                    bool zero, bool bias) {
  Linear l;
  l.w = ps.add(name + ".w", zero ? Mat(Mat::Zero(in, out)) : xavier_uniform(in, out, rng));
  if (bias) l.b = ps.add(name + ".b", Mat::Zero(1, out));
  return l;
}

Var Linear::operator()(Tape& t, Var x) const {
  if (b < 0) return matmul(x, t.param(w));
  return linear(x, t.param(w), t.param(b));
}

Norm Norm::make(ParamStore& ps, const std::string& name, int dim) {
  Norm n;
  n.gain = ps.add(name + ".g", Mat::Ones(1, dim));
  n.bias = ps.add(name + ".b", Mat::Zero(1, dim));
  return n;
}

Var Norm::operator()(Tape& t, Var x) const {
  return add_row(mul_row(layer_norm(x), t.param(gain)), t.param(bias));
}

FeedForward FeedForward::make(ParamStore& ps, const std::string& name, int dim, int hidden,
                              Rng& rng) {
  return {Linear::make(ps, name + ".up", dim, hidden, rng),
          Linear::make(ps, name + ".down", hidden, dim, rng)};
}

Var FeedForward::operator()(Tape& t, Var x, double dropout) const {
  return down(t, nn::dropout(gelu(up(t, x)), dropout));
}

Attention Attention::make(ParamStore& ps, const std::string& name, int dim, int heads, Rng& rng) {
  Attention a;
  a.q = Linear::make(ps, name + ".q", dim, dim, rng);
  // A key bias shifts every score of a query equally, so it is left out.
  a.k = Linear::make(ps, name + ".k", dim, dim, rng, false, false);
  a.v = Linear::make(ps, name + ".v", dim, dim, rng);
  a.o = Linear::make(ps, name + ".o", dim, dim, rng);
  a.heads = heads;
  return a;
}

Var Attention::operator()(Tape& t, Var x, Var mem, const std::vector<AttentionSegment>& segs) const {
  Var out = attention(q(t, x), k(t, mem), v(t, mem), heads, segs);
  return o(t, out);
}

EncoderBlock EncoderBlock::make(ParamStore& ps, const std::string& name, int dim, int heads,
                                Rng& rng) {
  return {Norm::make(ps, name + ".n1", dim), Norm::make(ps, name + ".n2", dim),
          Attention::make(ps, name + ".attn", dim, heads, rng),
          FeedForward::make(ps, name + ".ff", dim, 4 * dim, rng)};
}

Var EncoderBlock::operator()(Tape& t, Var x, const std::vector<AttentionSegment>& segs,
                             double dropout, double dp) const {
  Var h = n1(t, x);
  x = add(x, drop_path(nn::dropout(attn(t, h, h, segs), dropout), dp));
  x = add(x, drop_path(nn::dropout(ff(t, n2(t, x), dropout), dropout), dp));
  return x;
}

Var drop_path(Var branch, double p) {
  Tape& t = *branch.tape;
  if (!t.training() || p <= 0.0) return branch;
  std::bernoulli_distribution keep(1.0 - p);
  return keep(t.rng()) ? scale(branch, 1.0 / (1.0 - p)) : scale(branch, 0.0);
}

std::vector<AttentionSegment> self_segments(const std::vector<int>& lengths,
                                            const std::vector<std::vector<int>>& valid) {
  std::vector<AttentionSegment> segs;
  segs.reserve(lengths.size());
  int offset = 0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    AttentionSegment s;
    s.q_begin = offset;
    s.q_len = lengths[i];
    for (int r : valid[i]) s.keys.push_back(offset + r);
    segs.push_back(std::move(s));
    offset += lengths[i];
  }
  return segs;
}

}  // namespace cinetraj::nn
