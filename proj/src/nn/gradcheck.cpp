#include "cinetraj/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cinetraj::nn {

GradCheckResult grad_check(ParamStore& params, const std::function<Var(Tape&)>& loss,
                           double step, double floor) {
  GradBuffer analytic(params);
  double l0 = 0.0;
  {
    Tape t(&params, true, 0);
    Var l = loss(t);
    l0 = l.value()(0, 0);
    t.backward(l);
    t.accumulate(analytic);
  }
  const double roundoff =
      1e4 * std::numeric_limits<double>::epsilon() * std::max(std::abs(l0), 1.0) / step;
  floor = std::max(floor, roundoff);
  auto eval = [&] {
    Tape t(&params, true, 0);
    return loss(t).value()(0, 0);
  };

  GradCheckResult res;
  res.floor_used = floor;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat& p = params.value(static_cast<int>(i));
    for (Eigen::Index j = 0; j < p.size(); ++j) {
      const double orig = p.data()[j];
      p.data()[j] = orig + step;
      const double up = eval();
      p.data()[j] = orig - step;
      const double down = eval();
      p.data()[j] = orig;
      const double num = (up - down) / (2.0 * step);
      const double ana = analytic.grads[i].data()[j];
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), floor});
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = params.name(static_cast<int>(i)) + "[" + std::to_string(j) + "]";
        res.worst_analytic = ana;
        res.worst_numeric = num;
      }
      ++res.checked;
    }
  }
  return res;
}

}  // namespace cinetraj::nn
