#include "neufa/biattention.hpp"

#include <algorithm>
#include <cmath>

namespace neufa {

void BiAttentionConfig::validate() const {
  if (d_a == 0 || d_k1 == 0 || d_k2 == 0 || d_v1 == 0 || d_v2 == 0)
    throw ConfigError("bidirectional attention extents must be >= 1");
}

namespace {

void check_keys(const Tensor& k1, const Tensor& k2, const Linear& f1, const Linear& f2) {
  if (k1.ndim() != 2 || k2.ndim() != 2)
    throw DimensionError("attention keys must be matrices, got " + shape_str(k1.shape()) + " and " +
                         shape_str(k2.shape()));
  if (k1.dim(1) != f1.weight.dim(0) || k2.dim(1) != f2.weight.dim(0))
    throw DimensionError("attention keys " + shape_str(k1.shape()) + ", " + shape_str(k2.shape()) +
                         " do not match projections " + shape_str(f1.weight.shape()) + ", " +
                         shape_str(f2.weight.shape()));
  if (f1.weight.dim(1) != f2.weight.dim(1))
    throw DimensionError("attention projections disagree on d_a: " + shape_str(f1.weight.shape()) + " vs " +
                         shape_str(f2.weight.shape()));
}

}  // namespace

Tensor shared_matrix_multiplicative(const Tensor& k1, const Tensor& k2, const Linear& f1, const Linear& f2) {
  check_keys(k1, k2, f1, f2);
  return matmul(f1(k1), transpose(f2(k2)));
}

Tensor shared_matrix_additive(const Tensor& k1, const Tensor& k2, const Linear& f1, const Linear& f2,
                              const Linear& fa) {
  check_keys(k1, k2, f1, f2);
  const std::size_t n1 = k1.dim(0), n2 = k2.dim(0), da = f1.weight.dim(1);
  if (fa.weight.shape() != Shape{da, 1})
    throw DimensionError("additive attention: fa must map d_a -> 1, got " + shape_str(fa.weight.shape()));
  Tensor dup1 = dup(f1(k1), 1, n2);  // [n1 x n2 x d_a]
  Tensor dup2 = dup(f2(k2), 0, n1);  // [n1 x n2 x d_a]
  Tensor flat = reshape(add(dup1, dup2), {n1 * n2, da});
  return reshape(fa(flat), {n1, n2});
}

BiAttentionOutput bidirectional_attend(const Tensor& A, const Tensor& v1, const Tensor& v2) {
  if (A.ndim() != 2 || v1.ndim() != 2 || v2.ndim() != 2)
    throw DimensionError("bidirectional_attend expects matrices");
  if (v1.dim(0) != A.dim(0) || v2.dim(0) != A.dim(1))
    throw DimensionError("bidirectional_attend: A " + shape_str(A.shape()) + " inconsistent with V1 " +
                         shape_str(v1.shape()) + " and V2 " + shape_str(v2.shape()));
  BiAttentionOutput out;
  out.A = A;
  out.W12 = softmax(A, 0);
  out.W21 = softmax(transpose(A), 0);
  out.O1 = matmul(transpose(out.W12), v1);
  out.O2 = matmul(transpose(out.W21), v2);
  return out;
}

DiagonalConstraint diagonal_constraint_matrix(std::size_t n1, std::size_t n2) {
  if (n1 == 0 || n2 == 0) throw DimensionError("diagonal constraint needs n1, n2 >= 1");
  std::vector<double> d(n1 * n2);
  for (std::size_t i = 0; i < n1; ++i) {
    const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(n1);
    for (std::size_t j = 0; j < n2; ++j) {
      const double q = (static_cast<double>(j) + 0.5) / static_cast<double>(n2);
      const double r = std::max({p / q, q / p, (1.0 - p) / (1.0 - q), (1.0 - q) / (1.0 - p)});
      d[i * n2 + j] = std::tanh(0.5 * r);
    }
  }
  return {Tensor::from({n1, n2}, std::move(d)), true};
}

Tensor diagonal_attention_loss(const Tensor& w_tts, const Tensor& w_asr, const DiagonalConstraint& d) {
  if (w_tts.ndim() != 2 || w_asr.ndim() != 2 || w_tts.dim(0) != w_asr.dim(1) || w_tts.dim(1) != w_asr.dim(0) ||
      d.D.shape() != w_tts.shape())
    throw DimensionError("diagonal_attention_loss: W_TTS " + shape_str(w_tts.shape()) + ", W_ASR " +
                         shape_str(w_asr.shape()) + ", D " + shape_str(d.D.shape()) + " do not conform");
  return mean(mul(add(w_tts, transpose(w_asr)), d.D));
}

BiAttention::BiAttention(ParameterStore& store, const std::string& name, BiAttentionConfig config,
                         std::mt19937_64& rng)
    : cfg_(config) {
  cfg_.validate();
  f1_ = Linear::create(store, name + ".f1", cfg_.d_k1, cfg_.d_a, rng);
  f2_ = Linear::create(store, name + ".f2", cfg_.d_k2, cfg_.d_a, rng);
  if (cfg_.form == AttentionForm::additive) fa_ = Linear::create(store, name + ".fa", cfg_.d_a, 1, rng);
}

Tensor BiAttention::compatibility(const Tensor& k1, const Tensor& k2) const {
  return cfg_.form == AttentionForm::multiplicative ? shared_matrix_multiplicative(k1, k2, f1_, f2_)
                                                    : shared_matrix_additive(k1, k2, f1_, f2_, fa_);
}

BiAttentionOutput BiAttention::operator()(const Tensor& k1, const Tensor& k2, const Tensor& v1,
                                          const Tensor& v2) const {
  return bidirectional_attend(compatibility(k1, k2), v1, v2);
}

}  // namespace neufa
