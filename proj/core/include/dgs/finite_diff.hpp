#pragma once

#include <functional>

#include "dgs/types.hpp"

namespace dgs {

struct GradCheck {
  int total = 0;
  int passed = 0;
  double worst_abs_err = 0.0;
  int worst_index = -1;
  double pass_rate() const { return total == 0 ? 1.0 : static_cast<double>(passed) / total; }
};

// Central differences against an analytic gradient. Coordinate i passes when
// |fd_i - analytic_i| <= tol * max(|fd_i|, |analytic_i|, tol).
inline GradCheck check_gradient(const std::function<double(const VecX&)>& f, const VecX& x0,
                                const VecX& analytic, double step = 1e-5, double tol = 1e-4) {
  GradCheck r;
  r.total = static_cast<int>(x0.size());
  for (int i = 0; i < x0.size(); ++i) {
    VecX xp = x0, xm = x0;
    xp[i] += step;
    xm[i] -= step;
    const double fd = (f(xp) - f(xm)) / (2.0 * step);
    const double err = std::abs(fd - analytic[i]);
    const double bound = tol * std::max({std::abs(fd), std::abs(analytic[i]), tol});
    if (err <= bound) {
      ++r.passed;
    } else if (err > r.worst_abs_err) {
      r.worst_abs_err = err;
      r.worst_index = i;
    }
  }
  return r;
}

}  // namespace dgs
