#include "neufa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace neufa {

using detail::Node;
using detail::NodePtr;

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->value.assign(shape_numel(shape), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != values.size())
    throw DimensionError("shape " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                         " values");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= ndim()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf) throw ContractError("only leaf tensors may be mutated in place");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t i, std::size_t j) const { return node_->value[i * node_->shape[1] + j]; }

double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  const auto& s = node_->shape;
  return node_->value[(i * s[1] + j) * s[2] + k];
}

void Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf) throw ContractError("requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   detail::BackwardFn backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->inputs.reserve(inputs.size());
    for (auto& t : inputs) n->inputs.push_back(t.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor::wrap(std::move(n));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward requires a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (!n->is_leaf) n->grad.assign(n->value.size(), 0.0);
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf && n->backward_fn) n->backward_fn(n->grad);
  }
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_2d(const Tensor& a, const char* op) {
  if (a.ndim() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

// Decomposes a shape around `axis` into (outer, len, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m x k] += g[m x n] * b[k x n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * g[m x n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

template <class F, class D>
Tensor unary(const Tensor& a, F f, D dfdx_from_xy) {
  const auto x = a.data();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  NodePtr an = a.node();
  auto out_vals = std::make_shared<std::vector<double>>(y);
  return make_result(a.shape(), std::move(y), {a}, [an, out_vals, dfdx_from_xy](const std::vector<double>& g) {
    auto& ga = an->grad_buffer();
    const auto& xv = an->value;
    const auto& yv = *out_vals;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx_from_xy(xv[i], yv[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> c(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), c.data(), m, k, n);
  NodePtr an = a.node(), bn = b.node();
  return make_result({m, n}, std::move(c), {a, b}, [an, bn, m, k, n](const std::vector<double>& g) {
    if (an->requires_grad) gemm_nt(g.data(), bn->value.data(), an->grad_buffer().data(), m, n, k);
    if (bn->requires_grad) gemm_tn(an->value.data(), g.data(), bn->grad_buffer().data(), m, k, n);
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  return permute(a, {1, 0});
}

// ---------------------------------------------------------------------------
// elementwise

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor elementwise(Activation kind, const Tensor& a) {
  switch (kind) {
    case Activation::relu: return relu(a);
    case Activation::sigmoid: return sigmoid(a);
    case Activation::tanh: return tanh(a);
    case Activation::exp: return exp(a);
  }
  throw ConfigError("unknown activation");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  NodePtr an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(y), {a, b}, [an, bn](const std::vector<double>& g) {
    for (auto* n : {an.get(), bn.get()})
      if (n->requires_grad) {
        auto& gb = n->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  NodePtr an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(y), {a, b}, [an, bn](const std::vector<double>& g) {
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  NodePtr an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(y), {a, b}, [an, bn](const std::vector<double>& g) {
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * c;
  NodePtr an = a.node();
  return make_result(a.shape(), std::move(y), {a}, [an, c](const std::vector<double>& g) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + c;
  NodePtr an = a.node();
  return make_result(a.shape(), std::move(y), {a}, [an](const std::vector<double>& g) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  require_2d(a, "add_bias");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (bias.numel() != n)
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(a.shape()));
  std::vector<double> y(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] += bias[j];
  NodePtr an = a.node(), bn = bias.node();
  return make_result(a.shape(), std::move(y), {a, bias}, [an, bn, m, n](const std::vector<double>& g) {
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("mul_scalar_tensor: scale must hold one value, got " + shape_str(s.shape()));
  const double c = s[0];
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * c;
  NodePtr an = a.node(), sn = s.node();
  return make_result(a.shape(), std::move(y), {a, s}, [an, sn](const std::vector<double>& g) {
    const double c = sn->value[0];
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    }
    if (sn->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * an->value[i];
      sn->grad_buffer()[0] += acc;
    }
  });
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  NodePtr an = a.node();
  return make_result({1}, {s}, {a}, [an](const std::vector<double>& g) {
    auto& ga = an->grad_buffer();
    for (auto& v : ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto sp = split_axis(a.shape(), axis);
  const auto x = a.data();
  std::vector<double> y(x.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      double mx = x[base];
      for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, x[base + l * sp.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const double e = std::exp(x[base + l * sp.inner] - mx);
        y[base + l * sp.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < sp.len; ++l) y[base + l * sp.inner] /= z;
    }
  NodePtr an = a.node();
  auto yv = std::make_shared<std::vector<double>>(y);
  return make_result(a.shape(), std::move(y), {a}, [an, yv, sp](const std::vector<double>& g) {
    auto& ga = an->grad_buffer();
    const auto& s = *yv;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) dot += g[base + l * sp.inner] * s[base + l * sp.inner];
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t idx = base + l * sp.inner;
          ga[idx] += s[idx] * (g[idx] - dot);
        }
      }
  });
}

namespace {

void cumsum_along(const double* x, double* y, const AxisSplit& sp, bool reversed, bool accumulate) {
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      double run = 0.0;
      for (std::size_t step = 0; step < sp.len; ++step) {
        const std::size_t l = reversed ? sp.len - 1 - step : step;
        run += x[base + l * sp.inner];
        if (accumulate)
          y[base + l * sp.inner] += run;
        else
          y[base + l * sp.inner] = run;
      }
    }
}

}  // namespace

Tensor scan(const Tensor& a, std::size_t axis, bool reversed) {
  const auto sp = split_axis(a.shape(), axis);
  std::vector<double> y(a.numel());
  cumsum_along(a.data().data(), y.data(), sp, reversed, false);
  NodePtr an = a.node();
  // The adjoint of an inclusive scan is the scan in the opposite direction.
  return make_result(a.shape(), std::move(y), {a}, [an, sp, reversed](const std::vector<double>& g) {
    cumsum_along(g.data(), an->grad_buffer().data(), sp, !reversed, true);
  });
}

// ---------------------------------------------------------------------------
// layout

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  NodePtr an = a.node();
  return make_result(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()), {a},
                     [an](const std::vector<double>& g) {
                       auto& ga = an->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const auto& in_shape = a.shape();
  const std::size_t nd = in_shape.size();
  if (axes.size() != nd) throw DimensionError("permute: axis list does not match " + shape_str(in_shape));
  std::vector<bool> used(nd, false);
  for (auto ax : axes) {
    if (ax >= nd || used[ax]) throw DimensionError("permute: invalid axis list for " + shape_str(in_shape));
    used[ax] = true;
  }
  Shape out_shape(nd);
  for (std::size_t i = 0; i < nd; ++i) out_shape[i] = in_shape[axes[i]];
  std::vector<std::size_t> in_strides(nd, 1);
  for (std::size_t i = nd; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  // src_index[flat_out] lets forward and backward share one gather table.
  auto src = std::make_shared<std::vector<std::size_t>>(a.numel());
  std::vector<std::size_t> idx(nd, 0);
  for (std::size_t flat = 0; flat < a.numel(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < nd; ++i) off += idx[i] * in_strides[axes[i]];
    (*src)[flat] = off;
    for (std::size_t i = nd; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[(*src)[i]];
  NodePtr an = a.node();
  return make_result(std::move(out_shape), std::move(y), {a}, [an, src](const std::vector<double>& g) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[(*src)[i]] += g[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw DimensionError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  const auto sp = split_axis(out_shape, axis);
  std::vector<double> y(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.dim(axis) * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(p.data().data() + o * len, len, y.data() + o * sp.len * sp.inner + off * sp.inner);
    off += p.dim(axis);
  }
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result(std::move(out_shape), std::move(y), parts,
                     [nodes, offsets, sp](const std::vector<double>& g) {
                       for (std::size_t k = 0; k < nodes.size(); ++k) {
                         auto& n = *nodes[k];
                         if (!n.requires_grad) continue;
                         auto& gn = n.grad_buffer();
                         const std::size_t len = gn.size() / sp.outer;
                         for (std::size_t o = 0; o < sp.outer; ++o) {
                           const double* src = g.data() + o * sp.len * sp.inner + offsets[k] * sp.inner;
                           double* dst = gn.data() + o * len;
                           for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto sp = split_axis(a.shape(), axis);
  if (begin >= end || end > sp.len)
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                         shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const std::size_t len = (end - begin) * sp.inner;
  std::vector<double> y(sp.outer * len);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(a.data().data() + o * sp.len * sp.inner + begin * sp.inner, len, y.data() + o * len);
  NodePtr an = a.node();
  return make_result(std::move(out_shape), std::move(y), {a}, [an, sp, begin, len](const std::vector<double>& g) {
    auto& ga = an->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = ga.data() + o * sp.len * sp.inner + begin * sp.inner;
      const double* src = g.data() + o * len;
      for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
    }
  });
}

Tensor dup(const Tensor& a, std::size_t axis, std::size_t count) {
  if (axis > a.ndim()) throw DimensionError("dup: axis out of range for " + shape_str(a.shape()));
  if (count == 0) throw DimensionError("dup: count must be positive");
  Shape out_shape = a.shape();
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (std::size_t i = axis; i < a.ndim(); ++i) inner *= a.shape()[i];
  std::vector<double> y(outer * count * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < count; ++c)
      std::copy_n(a.data().data() + o * inner, inner, y.data() + (o * count + c) * inner);
  NodePtr an = a.node();
  return make_result(std::move(out_shape), std::move(y), {a}, [an, outer, count, inner](const std::vector<double>& g) {
    auto& ga = an->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t c = 0; c < count; ++c) {
        const double* src = g.data() + (o * count + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) ga[o * inner + i] += src[i];
      }
  });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("stack of zero tensors");
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    lifted.push_back(reshape(p, s));
  }
  return concat(lifted, 0);
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_2d(table, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw InputError("embedding: empty id sequence");
  std::vector<double> y(ids.size() * d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab)
      throw InputError("token id " + std::to_string(ids[t]) + " outside vocabulary of size " + std::to_string(vocab));
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[t]) * d, d, y.data() + t * d);
  }
  NodePtr tn = table.node();
  std::vector<int> idv(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(y), {table}, [tn, idv, d](const std::vector<double>& g) {
    auto& gt = tn->grad_buffer();
    for (std::size_t t = 0; t < idv.size(); ++t)
      for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(idv[t]) * d + j] += g[t * d + j];
  });
}

// ---------------------------------------------------------------------------
// losses

namespace {

// Per-element reduction weights for a prediction with `elements` entries laid
// out as `positions` x `per_pos`.
std::vector<double> reduction_weights(const Shape& position_shape, std::size_t per_pos, const Tensor& mask,
                                      const char* op) {
  const std::size_t positions = shape_numel(position_shape);
  std::vector<double> w(positions * per_pos, 0.0);
  if (!mask.defined()) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(w.size()));
    return w;
  }
  const Shape& ms = mask.shape();
  if (ms.size() > position_shape.size() || !std::equal(ms.begin(), ms.end(), position_shape.begin()))
    throw DimensionError(std::string(op) + ": mask " + shape_str(ms) + " is not a prefix of " +
                         shape_str(position_shape));
  const std::size_t span = per_pos * (positions / mask.numel());  // elements per mask entry
  if (ms.size() == 1) {
    double total = 0.0;
    for (double m : mask.data()) total += m;
    if (total <= 0.0) throw InputError(std::string(op) + ": mask selects no positions");
    for (std::size_t p = 0; p < mask.numel(); ++p)
      for (std::size_t e = 0; e < span; ++e) w[p * span + e] = mask[p] / (total * static_cast<double>(span));
    return w;
  }
  const std::size_t items = ms[0];
  const std::size_t per_item = mask.numel() / items;
  std::vector<double> item_total(items, 0.0);
  std::size_t live = 0;
  for (std::size_t b = 0; b < items; ++b) {
    for (std::size_t p = 0; p < per_item; ++p) item_total[b] += mask[b * per_item + p];
    if (item_total[b] > 0.0) ++live;
  }
  if (live == 0) throw InputError(std::string(op) + ": mask selects no positions");
  for (std::size_t b = 0; b < items; ++b) {
    if (item_total[b] <= 0.0) continue;
    const double denom = item_total[b] * static_cast<double>(span) * static_cast<double>(live);
    for (std::size_t p = 0; p < per_item; ++p) {
      const std::size_t mp = b * per_item + p;
      for (std::size_t e = 0; e < span; ++e) w[mp * span + e] = mask[mp] / denom;
    }
  }
  return w;
}

}  // namespace

Tensor mse_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require_same_shape(pred, target, "mse");
  auto w = std::make_shared<std::vector<double>>(reduction_weights(pred.shape(), 1, mask, "mse"));
  double l = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = pred[i] - target[i];
    l += (*w)[i] * d * d;
  }
  NodePtr pn = pred.node(), tn = target.node();
  return make_result({1}, {l}, {pred, target}, [pn, tn, w](const std::vector<double>& g) {
    for (std::size_t i = 0; i < w->size(); ++i) {
      const double d = 2.0 * (*w)[i] * (pn->value[i] - tn->value[i]) * g[0];
      if (pn->requires_grad) pn->grad_buffer()[i] += d;
      if (tn->requires_grad) tn->grad_buffer()[i] -= d;
    }
  });
}

Tensor mae_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require_same_shape(pred, target, "mae");
  auto w = std::make_shared<std::vector<double>>(reduction_weights(pred.shape(), 1, mask, "mae"));
  double l = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) l += (*w)[i] * std::abs(pred[i] - target[i]);
  NodePtr pn = pred.node(), tn = target.node();
  return make_result({1}, {l}, {pred, target}, [pn, tn, w](const std::vector<double>& g) {
    for (std::size_t i = 0; i < w->size(); ++i) {
      const double diff = pn->value[i] - tn->value[i];
      const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      const double d = (*w)[i] * s * g[0];
      if (pn->requires_grad) pn->grad_buffer()[i] += d;
      if (tn->requires_grad) tn->grad_buffer()[i] -= d;
    }
  });
}

Tensor cross_entropy_loss(const Tensor& probs, const Tensor& target, const Tensor& mask) {
  const Shape& ps = probs.shape();
  if (ps.size() < 2 || target.shape() != Shape(ps.begin(), ps.end() - 1))
    throw DimensionError("cross_entropy: probabilities " + shape_str(ps) + " do not match targets " +
                         shape_str(target.shape()));
  const std::size_t k = ps.back();
  auto w = std::make_shared<std::vector<double>>(reduction_weights(target.shape(), 1, mask, "cross_entropy"));
  constexpr double kFloor = 1e-300;
  auto cls = std::make_shared<std::vector<std::size_t>>(target.numel());
  double l = 0.0;
  for (std::size_t p = 0; p < target.numel(); ++p) {
    const double c = target[p];
    if (c < 0 || c >= static_cast<double>(k) || c != std::floor(c))
      throw InputError("cross_entropy: target class " + std::to_string(c) + " outside [0, " + std::to_string(k) + ")");
    (*cls)[p] = static_cast<std::size_t>(c);
    if ((*w)[p] != 0.0) l -= (*w)[p] * std::log(std::max(probs[p * k + (*cls)[p]], kFloor));
  }
  NodePtr pn = probs.node();
  return make_result({1}, {l}, {probs}, [pn, w, cls, k](const std::vector<double>& g) {
    auto& gp = pn->grad_buffer();
    for (std::size_t p = 0; p < cls->size(); ++p) {
      if ((*w)[p] == 0.0) continue;
      const std::size_t idx = p * k + (*cls)[p];
      gp[idx] -= (*w)[p] * g[0] / std::max(pn->value[idx], 1e-300);
    }
  });
}

Tensor loss(LossKind kind, const Tensor& pred, const Tensor& target, const Tensor& mask) {
  switch (kind) {
    case LossKind::mse: return mse_loss(pred, target, mask);
    case LossKind::mae: return mae_loss(pred, target, mask);
    case LossKind::cross_entropy: return cross_entropy_loss(pred, target, mask);
    case LossKind::mean: {
      // Masked mean of pred; target is ignored beyond the shape check.
      require_same_shape(pred, target, "mean");
      auto w = std::make_shared<std::vector<double>>(reduction_weights(pred.shape(), 1, mask, "mean"));
      double l = 0.0;
      for (std::size_t i = 0; i < pred.numel(); ++i) l += (*w)[i] * pred[i];
      NodePtr pn = pred.node();
      return make_result({1}, {l}, {pred}, [pn, w](const std::vector<double>& g) {
        auto& gp = pn->grad_buffer();
        for (std::size_t i = 0; i < w->size(); ++i) gp[i] += (*w)[i] * g[0];
      });
    }
  }
  throw ConfigError("unknown loss kind");
}

}  // namespace neufa
