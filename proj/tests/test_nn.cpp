#include <gtest/gtest.h>

#include <array>

#include "cinetraj/nn/gradcheck.hpp"
#include "cinetraj/nn/layers.hpp"
#include "cinetraj/nn/optim.hpp"

namespace nn = cinetraj::nn;
using nn::Mat;
using nn::Tape;
using nn::Var;

namespace {

Mat rnd(int r, int c, nn::Rng& rng) { return nn::normal(r, c, 1.0, rng); }

// Loss = sum(out .* W) for a fixed random W so every output entry matters.
Var probe(Var out, std::uint64_t seed = 99) {
  nn::Rng rng(seed);
  return nn::weighted_sum(out, rnd(static_cast<int>(out.rows()), static_cast<int>(out.cols()), rng));
}

void expect_ok(nn::ParamStore& ps, const std::function<Var(Tape&)>& f) {
  const auto r = nn::grad_check(ps, f);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
  EXPECT_GT(r.checked, 0u);
}

}  // namespace

TEST(NnOps, Elementwise) {
  nn::Rng rng(1);
  nn::ParamStore ps;
  int a = ps.add("a", rnd(3, 4, rng));
  int b = ps.add("b", rnd(3, 4, rng));
  int r = ps.add("r", rnd(1, 4, rng));
  expect_ok(ps, [&](Tape& t) {
    Var x = t.param(a), y = t.param(b);
    Var z = nn::add(nn::mul(x, y), nn::sub(nn::scale(x, 0.3), nn::square(y)));
    z = nn::add_scalar(nn::mul_row(nn::add_row(z, t.param(r)), t.param(r)), 0.5);
    z = nn::add(nn::gelu(z), nn::silu(nn::exp(nn::scale(x, 0.2))));
    return probe(z);
  });
}

TEST(NnOps, ClampPassesGradientInsideOnly) {
  Tape t;
  Mat m(1, 3);
  m << -2.0, 0.5, 3.0;
  nn::ParamStore ps;
  int p = ps.add("p", m);
  Tape tp(&ps);
  Var c = nn::clamp(tp.param(p), -1.0, 1.0);
  tp.backward(nn::sum(c));
  nn::GradBuffer g(ps);
  tp.accumulate(g);
  EXPECT_EQ(g.grads[0](0, 0), 0.0);
  EXPECT_EQ(g.grads[0](0, 1), 1.0);
  EXPECT_EQ(g.grads[0](0, 2), 0.0);
}

TEST(NnOps, MatrixProducts) {
  nn::Rng rng(2);
  nn::ParamStore ps;
  int a = ps.add("a", rnd(3, 5, rng));
  int b = ps.add("b", rnd(5, 2, rng));
  int c = ps.add("c", rnd(4, 5, rng));
  int bias = ps.add("bias", rnd(1, 2, rng));
  expect_ok(ps, [&](Tape& t) {
    Var x = nn::matmul(t.param(a), t.param(b));
    Var y = nn::matmul_nt(t.param(a), t.param(c));
    Var z = nn::linear(t.param(c), t.param(b), t.param(bias));
    return nn::add(nn::add(probe(x, 1), probe(y, 2)), probe(nn::transpose(z), 3));
  });
}

TEST(NnOps, Normalisation) {
  nn::Rng rng(3);
  nn::ParamStore ps;
  int x = ps.add("x", rnd(4, 6, rng));
  int g = ps.add("g", rnd(4, 6, rng));
  int b = ps.add("b", rnd(4, 6, rng));
  expect_ok(ps, [&](Tape& t) {
    Var y = nn::adaln(t.param(x), t.param(g), t.param(b));
    Var n = nn::l2_normalize_rows(t.param(x));
    Var l = nn::logsumexp_rows(t.param(b));
    return nn::add(nn::add(probe(y, 4), probe(n, 5)), probe(l, 6));
  });
}

TEST(NnOps, AdalnWithZeroModulationIsLayerNorm) {
  nn::Rng rng(4);
  Tape t;
  Var x = t.constant(rnd(3, 8, rng));
  Var z = t.constant(Mat::Zero(3, 8));
  const Mat a = nn::adaln(x, z, z).value();
  const Mat b = nn::layer_norm(x).value();
  EXPECT_EQ((a - b).cwiseAbs().maxCoeff(), 0.0);
}

TEST(NnOps, Structural) {
  nn::Rng rng(5);
  nn::ParamStore ps;
  int a = ps.add("a", rnd(4, 3, rng));
  int b = ps.add("b", rnd(2, 3, rng));
  expect_ok(ps, [&](Tape& t) {
    std::array<Var, 2> rows{t.param(a), t.param(b)};
    Var cr = nn::concat_rows(rows);
    Var g = nn::gather_rows(cr, {5, 0, 0, 3});
    std::array<Var, 2> cols{g, nn::slice_cols(t.param(a), 1, 2)};
    Var cc = nn::concat_cols(cols);
    Var p = nn::pool_rows(cr, {{0, 1, 2}, {4, 5}});
    return nn::add(nn::add(probe(cc, 7), probe(p, 8)), nn::mean(nn::square(t.param(b))));
  });
}

TEST(NnOps, AttentionSegments) {
  nn::Rng rng(6);
  nn::ParamStore ps;
  int q = ps.add("q", rnd(5, 4, rng));
  int k = ps.add("k", rnd(6, 4, rng));
  int v = ps.add("v", rnd(6, 4, rng));
  std::vector<nn::AttentionSegment> segs{{0, 3, {0, 1, 2, 5}}, {3, 2, {3, 4}}};
  expect_ok(ps, [&](Tape& t) {
    return probe(nn::attention(t.param(q), t.param(k), t.param(v), 2, segs));
  });
}

TEST(NnOps, AttentionIgnoresUnlistedKeys) {
  nn::Rng rng(7);
  Mat q = rnd(2, 4, rng), k = rnd(3, 4, rng), v = rnd(3, 4, rng);
  std::vector<nn::AttentionSegment> segs{{0, 2, {0, 1}}};
  Tape t1;
  const Mat a = nn::attention(t1.constant(q), t1.constant(k), t1.constant(v), 2, segs).value();
  k.row(2).setConstant(1e3);
  v.row(2).setConstant(-7.0);
  Tape t2;
  const Mat b = nn::attention(t2.constant(q), t2.constant(k), t2.constant(v), 2, segs).value();
  EXPECT_EQ((a - b).cwiseAbs().maxCoeff(), 0.0);
}

TEST(NnLayers, EncoderBlockGradient) {
  nn::Rng rng(8);
  nn::ParamStore ps;
  auto blk = nn::EncoderBlock::make(ps, "blk", 8, 2, rng);
  // Perturb zero-initialised biases and unit gains so every path is exercised.
  for (std::size_t i = 0; i < ps.size(); ++i) ps.value(static_cast<int>(i)) += 0.1 * rnd(
      static_cast<int>(ps.value(static_cast<int>(i)).rows()),
      static_cast<int>(ps.value(static_cast<int>(i)).cols()), rng);
  const Mat x0 = rnd(5, 8, rng);
  auto segs = nn::self_segments({3, 2}, {{0, 1, 2}, {0, 1}});
  expect_ok(ps, [&](Tape& t) {
    return probe(blk(t, t.constant(x0), segs, 0.1, 0.0));
  });
}

TEST(NnOptim, ScheduleWarmupAndCosine) {
  nn::AdamWConfig c;
  c.lr = 1.0;
  c.warmup_steps = 10;
  c.total_steps = 110;
  EXPECT_DOUBLE_EQ(nn::scheduled_lr(c, 0), 0.1);
  EXPECT_DOUBLE_EQ(nn::scheduled_lr(c, 9), 1.0);
  EXPECT_DOUBLE_EQ(nn::scheduled_lr(c, 10), 1.0);
  EXPECT_NEAR(nn::scheduled_lr(c, 60), 0.5, 1e-12);
  EXPECT_NEAR(nn::scheduled_lr(c, 110), 0.0, 1e-12);
}

TEST(NnOptim, AdamWMinimisesQuadratic) {
  nn::ParamStore ps;
  int p = ps.add("p", Mat::Constant(1, 3, 5.0));
  nn::AdamWConfig c;
  c.lr = 0.1;
  c.weight_decay = 0.0;
  nn::AdamW opt(ps, c);
  for (int i = 0; i < 500; ++i) {
    Tape t(&ps);
    Var l = nn::sum(nn::square(t.param(p)));
    t.backward(l);
    nn::GradBuffer g(ps);
    t.accumulate(g);
    opt.step(ps, g);
  }
  EXPECT_LT(ps.value(p).cwiseAbs().maxCoeff(), 1e-2);
}
