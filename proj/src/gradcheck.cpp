#include "nast/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace nast {

GradReport grad_check(const std::function<double(const std::vector<double>&)>& f,
                      const std::vector<double>& analytic_grad,
                      const std::vector<double>& point, double step, double tolerance) {
  check_arg(analytic_grad.size() == point.size(), "grad_check: gradient/point size mismatch");
  check_arg(step > 0.0, "grad_check: step must be positive");
  GradReport rep;
  rep.pass = true;
  std::vector<double> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + step;
    const double fp = f(probe);
    probe[i] = point[i] - step;
    const double fm = f(probe);
    probe[i] = point[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      rep.nonfinite = true;
      rep.nonfinite_index = static_cast<Index>(i);
      rep.pass = false;
      return rep;
    }
    const double gn = (fp - fm) / (2.0 * step);
    const double ga = analytic_grad[i];
    const double rel = std::abs(ga - gn) / std::max({std::abs(ga), std::abs(gn), 1e-8});
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = static_cast<Index>(i);
      rep.analytic_at_worst = ga;
      rep.numeric_at_worst = gn;
    }
  }
  rep.pass = rep.max_rel_err <= tolerance;
  return rep;
}

}  // namespace nast
