#include "s2a/gradcheck.hpp"

#include <cmath>
#include <limits>

#include "s2a/common.hpp"

namespace s2a {

GradCheckReport grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& inputs, double eps, double tol) {
  if (eps <= 0.0) throw ValidationError("grad_check eps must be positive");

  for (const Tensor& t : inputs) const_cast<Tensor&>(t).zero_grad();
  Tensor loss = f(inputs);
  if (loss.size() != 1) throw ValidationError("grad_check needs a scalar function");
  backward(loss);
  const double f0 = loss.item();

  GradCheckReport report;
  for (const Tensor& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<double> analytic = t.grad();
    auto& vals = const_cast<Tensor&>(t).values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      // A non-smooth point (ReLU or max kink) between x-h and x+h makes the
      // central difference inaccurate by up to half the disagreement of the
      // two one-sided slopes, so that much deviation is forgiven. Paired
      // kinks can cancel that signal at one step size, so the check is run
      // at two step sizes and the smaller deviation kept; a wrong backward
      // rule disagrees at every step size on smooth coordinates.
      double best = std::numeric_limits<double>::infinity();
      for (const double h : {eps, 0.25 * eps}) {
        vals[i] = saved + h;
        const double fp = f(inputs).item();
        vals[i] = saved - h;
        const double fm = f(inputs).item();
        vals[i] = saved;

        const double fwd = (fp - f0) / h;
        const double bwd = (f0 - fm) / h;
        const double kink_allowance = 0.5 * std::abs(fwd - bwd);

        const double numeric = (fp - fm) / (2.0 * h);
        const double denom =
            std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
        const double deviation =
            std::max(0.0, std::abs(analytic[i] - numeric) - kink_allowance);
        best = std::min(best, deviation / denom);
      }
      report.max_rel_error = std::max(report.max_rel_error, best);
    }
  }
  report.pass = report.max_rel_error <= tol;
  return report;
}

}  // namespace s2a
