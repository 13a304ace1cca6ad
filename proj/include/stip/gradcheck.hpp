#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "stip/tensor.hpp"

namespace stip {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  bool passed = false;
};

// Compares backward-pass gradients of a scalar-valued function against
// central finite differences over every entry of every listed tensor.
GradCheckResult check_gradients(const std::string& name,
                                const std::function<ad::Tensor(ad::Tape*)>& loss_fn,
                                const std::vector<ad::Tensor*>& inputs,
                                double step = 1e-5, double tol = 1e-4);

// The full finite-difference suite: every differentiable op plus a complete
// 1-layer model with all parameter groups. Prints one line per check.
bool run_gradcheck_suite(std::ostream& out);

}  // namespace stip
