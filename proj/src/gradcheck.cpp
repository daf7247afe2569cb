#include "neufa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace neufa {

GradCheckResult grad_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double h,
                                   double floor) {
  for (auto& t : leaves) {
    if (!t.is_leaf()) throw ContractError("grad_check: only leaf tensors can be perturbed");
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor out = f();
  if (out.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  backward(out);

  GradCheckResult res;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    Tensor& t = leaves[k];
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto x = t.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + h;
      const double fp = f().item();
      x[i] = orig - h;
      const double fm = f().item();
      x[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      const double err = std::abs(analytic[i] - numeric) / denom;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_tensor = k;
        res.worst_index = i;
        res.worst_analytic = analytic[i];
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor leaf = x.detach();
  return grad_check_leaves([&] { return f(leaf); }, {leaf}, h).max_rel_error;
}

}  // namespace neufa
