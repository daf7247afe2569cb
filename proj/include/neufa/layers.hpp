#pragma once

// Fused differentiable layers: convolution, GRU recurrence, batch norm.

#include <vector>

#include "neufa/tensor.hpp"

namespace neufa {

// Cross-correlation of input [C_in x H x W] with filters [C_out x C_in x kh x kw]
// plus a per-channel bias [C_out]. With same_padding the borders are zero
// padded (odd kernels only) and the output keeps H x W; otherwise the output is
// the valid region.
Tensor conv2d(const Tensor& input, const Tensor& filters, const Tensor& bias, bool same_padding = true);

// One GRU layer direction. Gate order inside the 3H blocks is (reset, update,
// candidate):
//   r = s(x Wx_r + bx_r + h Wh_r + bh_r)
//   z = s(x Wx_z + bx_z + h Wh_z + bh_z)
//   n = tanh(x Wx_n + bx_n + r * (h Wh_n + bh_n))
//   h' = (1 - z) * n + z * h
struct GruWeights {
  Tensor wx;  // [d_in x 3H]
  Tensor wh;  // [H x 3H]
  Tensor bx;  // [3H]
  Tensor bh;  // [3H]

  std::size_t hidden() const { return wh.dim(0); }
};

// seq [T x d_in] -> [T x H], initial state zero. `reverse` runs from T-1 to 0
// and writes step t's state to row t.
Tensor gru(const Tensor& seq, const GruWeights& w, bool reverse);

// Forward and backward passes concatenated per step: [T x 2H].
Tensor bigru(const Tensor& seq, const GruWeights& forward, const GruWeights& backward);

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased
};

// x [C x N] normalized per channel over N with the current statistics.
// `stats`, when given, receives the statistics that were used.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        BatchStats* stats = nullptr);

// x [C x N] normalized with fixed (running) statistics.
Tensor batch_norm_infer(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        std::span<const double> mean, std::span<const double> var, double eps);

}  // namespace neufa
