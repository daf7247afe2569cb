#pragma once

// Bidirectional attention: two key-value sets attend to each other through one
// shared compatibility matrix A [n1 x n2]. Softmax over A's first axis gives
// the weights summarizing V1 for every key of set 2; softmax over the first
// axis of A^T gives the weights summarizing V2 for every key of set 1.

#include <random>
#include <string>

#include "neufa/params.hpp"
#include "neufa/tensor.hpp"

namespace neufa {

enum class AttentionForm { multiplicative, additive };

struct BiAttentionConfig {
  std::size_t d_a = 32;
  AttentionForm form = AttentionForm::multiplicative;
  std::size_t d_k1 = 1, d_k2 = 1, d_v1 = 1, d_v2 = 1;

  void validate() const;
};

struct BiAttentionOutput {
  Tensor A;    // [n1 x n2]
  Tensor W12;  // [n1 x n2], every column sums to 1
  Tensor W21;  // [n2 x n1], every column sums to 1
  Tensor O1;   // [n2 x d_v1] = W12^T V1
  Tensor O2;   // [n1 x d_v2] = W21^T V2
};

// Half-index relative positions p = (i + 0.5) / n1, q = (j + 0.5) / n2 keep
// every ratio finite; the entries are constants outside the graph.
struct DiagonalConstraint {
  Tensor D;  // [n1 x n2]
  bool half_index_offsets = true;
};

// A = f1(K1) f2(K2)^T
Tensor shared_matrix_multiplicative(const Tensor& k1, const Tensor& k2, const Linear& f1, const Linear& f2);

// A[i, j] = fa(f1(K1)[i] + f2(K2)[j]), built by duplicating both projections
// to [n1 x n2 x d_a] before the d_a -> 1 map.
Tensor shared_matrix_additive(const Tensor& k1, const Tensor& k2, const Linear& f1, const Linear& f2,
                              const Linear& fa);

BiAttentionOutput bidirectional_attend(const Tensor& A, const Tensor& v1, const Tensor& v2);

DiagonalConstraint diagonal_constraint_matrix(std::size_t n1, std::size_t n2);

// mean((W_TTS + W_ASR^T) * D)
Tensor diagonal_attention_loss(const Tensor& w_tts, const Tensor& w_asr, const DiagonalConstraint& d);

// Learned projections plus the forward pass.
class BiAttention {
 public:
  BiAttention() = default;
  BiAttention(ParameterStore& store, const std::string& name, BiAttentionConfig config, std::mt19937_64& rng);

  Tensor compatibility(const Tensor& k1, const Tensor& k2) const;
  BiAttentionOutput operator()(const Tensor& k1, const Tensor& k2, const Tensor& v1, const Tensor& v2) const;

  const BiAttentionConfig& config() const { return cfg_; }
  const Linear& f1() const { return f1_; }
  const Linear& f2() const { return f2_; }
  const Linear& fa() const { return fa_; }

 private:
  BiAttentionConfig cfg_;
  Linear f1_, f2_, fa_;
};

}  // namespace neufa
