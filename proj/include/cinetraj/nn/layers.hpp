#pragma once

#include <string>
#include <vector>

#include "cinetraj/nn/params.hpp"
#include "cinetraj/nn/tape.hpp"

namespace cinetraj::nn {

struct Linear {
  int w = -1;  // in x out
  int b = -1;  // 1 x out, or -1 for none

  /// Xavier-initialised weight, zero bias. `zero` makes both zero.
  static Linear make(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                     bool zero = false, bool bias = true);
  Var operator()(Tape& t, Var x) const;
};

/// Layer norm with a learned gain and bias.
struct Norm {
  int gain = -1;
  int bias = -1;

  static Norm make(ParamStore& ps, const std::string& name, int dim);
  Var operator()(Tape& t, Var x) const;
};

struct FeedForward {
  Linear up, down;

  static FeedForward make(ParamStore& ps, const std::string& name, int dim, int hidden, Rng& rng);
  Var operator()(Tape& t, Var x, double dropout) const;
};

/// Multi-head attention; queries from `x`, keys and values from `mem`.
struct Attention {
  Linear q, k, v, o;
  int heads = 1;

  static Attention make(ParamStore& ps, const std::string& name, int dim, int heads, Rng& rng);
  Var operator()(Tape& t, Var x, Var mem, const std::vector<AttentionSegment>& segs) const;
};

/// Pre-norm transformer encoder block.
struct EncoderBlock {
  Norm n1, n2;
  Attention attn;
  FeedForward ff;

  static EncoderBlock make(ParamStore& ps, const std::string& name, int dim, int heads, Rng& rng);
  Var operator()(Tape& t, Var x, const std::vector<AttentionSegment>& segs, double dropout,
                 double drop_path) const;
};

/// Whole residual branch dropped with probability p per call (training only).
Var drop_path(Var branch, double p);

/// Self-attention segments for sequences stacked by rows. Sequence i has
/// lengths[i] rows; its queries see only its own rows listed in valid[i]
/// (local indices).
std::vector<AttentionSegment> self_segments(const std::vector<int>& lengths,
                                            const std::vector<std::vector<int>>& valid);

}  // namespace cinetraj::nn
