#pragma once

// Dense row-major float64 tensors with tape-free reverse-mode differentiation.
//
// Every op returns a new Tensor. When any operand requires a gradient, the
// result keeps shared ownership of its operands together with a closure that
// propagates the output gradient back to them; the graph lives exactly as
// long as the tensors that reference it.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "neufa/errors.hpp"

namespace neufa {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(const std::vector<double>& out_grad)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until the node receives a gradient
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<NodePtr> inputs;
  BackwardFn backward_fn;

  // Lazily sized gradient buffer.
  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  // Leaf-only mutable access, used by optimizers and finite-difference probes.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat) const { return node_->value[flat]; }
  double at(std::size_t i, std::size_t j) const;
  double at(std::size_t i, std::size_t j, std::size_t k) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return node_->is_leaf; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Same values, cut from the graph.
  Tensor detach() const;

  const detail::NodePtr& node() const { return node_; }
  static Tensor wrap(detail::NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  detail::NodePtr node_;
};

// Builds an op result. `backward` is only retained when one of `inputs`
// requires a gradient.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   detail::BackwardFn backward);

// Runs reverse-mode accumulation from a scalar. Leaf gradients accumulate
// across calls until zero_grad(); interior gradients are recomputed.
void backward(const Tensor& loss);

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- elementwise ----------------------------------------------------------

enum class Activation { relu, sigmoid, tanh, exp };

Tensor elementwise(Activation kind, const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
// a[m x n] + bias[n] on every row; the only broadcast the library supports.
Tensor add_bias(const Tensor& a, const Tensor& bias);
// a * s where s is a one-element tensor (differentiable in both).
Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s);

// ---- reductions and normalization ----------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor softmax(const Tensor& a, std::size_t axis);
// Inclusive cumulative sum; `reversed` computes r(cumsum(r(a))).
Tensor scan(const Tensor& a, std::size_t axis, bool reversed = false);

// ---- layout ----------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
// Inserts a new axis at `axis` holding `count` copies of `a`.
Tensor dup(const Tensor& a, std::size_t axis, std::size_t count);
Tensor stack(const std::vector<Tensor>& parts);

// Row gather from an embedding table [vocab x d].
Tensor embedding(const Tensor& table, std::span<const int> ids);

// ---- losses ---------------------------------------------------------------

enum class LossKind { mse, mae, cross_entropy, mean };

// All losses are mean-reduced. An optional mask covers a leading prefix of the
// prediction's shape (for cross entropy: the target's shape). A 1-D mask gives
// a plain masked mean; a mask with >= 2 axes treats axis 0 as the batch axis
// and averages per-item masked means, so padding never changes the result.
Tensor mse_loss(const Tensor& pred, const Tensor& target, const Tensor& mask = {});
Tensor mae_loss(const Tensor& pred, const Tensor& target, const Tensor& mask = {});
// `probs` is [..., K] per-step distributions, `target` holds class indices.
Tensor cross_entropy_loss(const Tensor& probs, const Tensor& target, const Tensor& mask = {});
Tensor loss(LossKind kind, const Tensor& pred, const Tensor& target, const Tensor& mask = {});

}  // namespace neufa
