#pragma once

#include <functional>
#include <string>

#include "cinetraj/nn/params.hpp"
#include "cinetraj/nn/tape.hpp"

namespace cinetraj::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  double floor_used = 0.0;
};

/// Compares tape gradients against central differences for every parameter
/// scalar. `loss` must build a 1x1 loss on the tape it is given and behave
/// identically on every call (fixed seeds).
/// Relative error is |a - n| / max(|a|, |n|, floor, r) where
/// r = 1e4 * eps * max(|L|, 1) / step: below r a central difference cannot
/// resolve four significant digits because of round-off in L itself.
GradCheckResult grad_check(ParamStore& params, const std::function<Var(Tape&)>& loss,
                           double step = 1e-5, double floor = 1e-6);

}  // namespace cinetraj::nn
