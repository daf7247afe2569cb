#pragma once

#include <functional>
#include <vector>

#include "neufa/tensor.hpp"

namespace neufa {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares the analytic gradient of scalar f at x with central differences.
// Elementwise relative error is |a - n| / max(|a|, |n|, floor).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

// Same check over several leaf tensors that `f` reads directly (model
// parameters). Leaf values are perturbed in place and restored. Raise `floor`
// when f is large: central differences carry roughly eps * |f| / h of
// rounding noise, which swamps gradients that are exactly zero.
GradCheckResult grad_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double h = 1e-5,
                                  double floor = 1e-8);

}  // namespace neufa
