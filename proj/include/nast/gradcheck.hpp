#pragma once

#include <functional>
#include <vector>

#include "nast/common.hpp"

namespace nast {

struct GradReport {
  bool pass = false;
  double max_rel_err = 0.0;
  Index worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool nonfinite = false;     // loss evaluated non-finite at some probe
  Index nonfinite_index = -1; // coordinate being probed when that happened
};

// Central-difference check of an analytic gradient, evaluated in 64-bit
// arithmetic end to end. rel_err = |ga - gn| / max(|ga|, |gn|, 1e-8).
GradReport grad_check(const std::function<double(const std::vector<double>&)>& f,
                      const std::vector<double>& analytic_grad,
                      const std::vector<double>& point, double step, double tolerance);

}  // namespace nast
