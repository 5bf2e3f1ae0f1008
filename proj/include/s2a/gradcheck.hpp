#pragma once

#include <functional>
#include <vector>

#include "s2a/tensor.hpp"

namespace s2a {

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool pass = false;
};

/// Central finite differences against the analytic reverse pass. `f` must
/// rebuild its graph from the given leaves on every call and return a scalar.
/// Only leaves with requires_grad are checked. Relative error uses
/// |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& inputs, double eps = 1e-5, double tol = 1e-4);

}  // namespace s2a
