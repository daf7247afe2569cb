#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "neufa/biattention.hpp"
#include "neufa/gradcheck.hpp"

using namespace neufa;

namespace {

Tensor rnd(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = d(rng);
  return Tensor::from(std::move(s), std::move(v));
}

Tensor eye(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor::from({n, n}, v);
}

Linear identity(std::size_t n) { return {eye(n), Tensor::zeros({n})}; }

Linear random_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {rnd({in, out}, rng), rnd({out}, rng)};
}

// Row r of x [n x d] projected by f, computed entry by entry.
std::vector<double> project_row(const Tensor& x, std::size_t r, const Linear& f) {
  const std::size_t d = x.dim(1), o = f.weight.dim(1);
  std::vector<double> out(o);
  for (std::size_t k = 0; k < o; ++k) {
    out[k] = f.bias[k];
    for (std::size_t j = 0; j < d; ++j) out[k] += x.at(r, j) * f.weight.at(j, k);
  }
  return out;
}

}  // namespace

TEST(SharedMatrix, MultiplicativeIdentity) {
  Tensor a = shared_matrix_multiplicative(eye(3), eye(3), identity(3), identity(3));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(a[i], eye(3)[i]);
}

TEST(SharedMatrix, MultiplicativeZeroKeys) {
  std::mt19937_64 rng(1);
  Linear f1{rnd({2, 4}, rng), Tensor::zeros({4})}, f2 = random_linear(3, 4, rng);
  Tensor a = shared_matrix_multiplicative(Tensor::zeros({2, 2}), rnd({5, 3}, rng), f1, f2);
  for (double v : a.data()) EXPECT_EQ(v, 0.0);
}

TEST(SharedMatrix, MultiplicativeMatchesDotProducts) {
  std::mt19937_64 rng(2);
  Tensor k1 = rnd({2, 3}, rng), k2 = rnd({3, 5}, rng);
  Linear f1 = random_linear(3, 4, rng), f2 = random_linear(5, 4, rng);
  Tensor a = shared_matrix_multiplicative(k1, k2, f1, f2);
  ASSERT_EQ(a.shape(), (Shape{2, 3}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const auto p = project_row(k1, i, f1), q = project_row(k2, j, f2);
      double dot = 0;
      for (std::size_t k = 0; k < 4; ++k) dot += p[k] * q[k];
      EXPECT_NEAR(a.at(i, j), dot, 1e-12);
    }
}

TEST(SharedMatrix, AdditiveZeroKeysGiveConstantRows) {
  std::mt19937_64 rng(3);
  Tensor k2 = rnd({4, 3}, rng);
  Linear fa{Tensor::full({3, 1}, 1.0), Tensor::zeros({1})};
  Tensor a = shared_matrix_additive(Tensor::zeros({2, 3}), k2, identity(3), identity(3), fa);
  for (std::size_t j = 0; j < 4; ++j) {
    const double s = k2.at(j, 0) + k2.at(j, 1) + k2.at(j, 2);
    EXPECT_NEAR(a.at(0, j), s, 1e-14);
    EXPECT_NEAR(a.at(1, j), s, 1e-14);
  }
}

TEST(SharedMatrix, AdditiveMatchesPerEntryOracle) {
  std::mt19937_64 rng(4);
  Tensor k1 = rnd({2, 3}, rng), k2 = rnd({2, 4}, rng);
  Linear f1 = random_linear(3, 5, rng), f2 = random_linear(4, 5, rng), fa = random_linear(5, 1, rng);
  Tensor a = shared_matrix_additive(k1, k2, f1, f2, fa);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      const auto p = project_row(k1, i, f1), q = project_row(k2, j, f2);
      double v = fa.bias[0];
      for (std::size_t k = 0; k < 5; ++k) v += (p[k] + q[k]) * fa.weight[k];
      EXPECT_NEAR(a.at(i, j), v, 1e-12);
    }
}

TEST(SharedMatrix, AdditiveIsRowPermutationEquivariant) {
  std::mt19937_64 rng(5);
  Tensor k1 = rnd({3, 2}, rng), k2 = rnd({4, 2}, rng);
  Linear f1 = random_linear(2, 3, rng), f2 = random_linear(2, 3, rng), fa = random_linear(3, 1, rng);
  Tensor swapped = Tensor::from({3, 2}, {k1.at(2, 0), k1.at(2, 1), k1.at(1, 0), k1.at(1, 1), k1.at(0, 0), k1.at(0, 1)});
  Tensor a = shared_matrix_additive(k1, k2, f1, f2, fa), b = shared_matrix_additive(swapped, k2, f1, f2, fa);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(a.at(0, j), b.at(2, j), 1e-14);
    EXPECT_NEAR(a.at(1, j), b.at(1, j), 1e-14);
    EXPECT_NEAR(a.at(2, j), b.at(0, j), 1e-14);
  }
}

TEST(SharedMatrix, KeyWidthMismatchIsDimensionError) {
  std::mt19937_64 rng(6);
  EXPECT_THROW(shared_matrix_multiplicative(rnd({2, 3}, rng), rnd({2, 3}, rng), identity(2), identity(3)),
               DimensionError);
}

TEST(Attend, ZeroScoresAverageValues) {
  std::mt19937_64 rng(7);
  Tensor v1 = rnd({2, 3}, rng), v2 = rnd({4, 2}, rng);
  auto o = bidirectional_attend(Tensor::zeros({2, 4}), v1, v2);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(o.W12.at(0, j), 0.5, 1e-15);
    EXPECT_NEAR(o.W12.at(1, j), 0.5, 1e-15);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(o.O1.at(j, k), 0.5 * (v1.at(0, k) + v1.at(1, k)), 1e-14);
  }
}

TEST(Attend, SaturatedColumnPicksRow) {
  std::mt19937_64 rng(8);
  Tensor v1 = rnd({3, 2}, rng), v2 = rnd({2, 2}, rng);
  Tensor a = Tensor::from({3, 2}, {1000, 0, -1000, 0, -1000, 0});
  auto o = bidirectional_attend(a, v1, v2);
  EXPECT_NEAR(o.O1.at(0, 0), v1.at(0, 0), 1e-12);
  EXPECT_NEAR(o.O1.at(0, 1), v1.at(0, 1), 1e-12);
}

TEST(Attend, ShapesAndSwapSymmetry) {
  std::mt19937_64 rng(9);
  Tensor a = rnd({3, 5}, rng, -3, 3), v1 = rnd({3, 2}, rng), v2 = rnd({5, 4}, rng);
  auto o = bidirectional_attend(a, v1, v2);
  EXPECT_EQ(o.W12.shape(), (Shape{3, 5}));
  EXPECT_EQ(o.W21.shape(), (Shape{5, 3}));
  EXPECT_EQ(o.O1.shape(), (Shape{5, 2}));
  EXPECT_EQ(o.O2.shape(), (Shape{3, 4}));
  auto s = bidirectional_attend(transpose(a), v2, v1);
  for (std::size_t i = 0; i < o.W12.numel(); ++i) EXPECT_EQ(s.W21[i], o.W12[i]);
  for (std::size_t i = 0; i < o.O1.numel(); ++i) EXPECT_EQ(s.O2[i], o.O1[i]);
}

TEST(DiagonalConstraint, HandValues) {
  auto d = diagonal_constraint_matrix(2, 2);
  EXPECT_NEAR(d.D.at(0, 0), 0.46211715726000974, 1e-12);
  EXPECT_NEAR(d.D.at(0, 1), 0.9051482536448664, 1e-12);
  EXPECT_EQ(d.D.at(0, 1), d.D.at(1, 0));
  auto e = diagonal_constraint_matrix(4, 12);  // p == q at (1, 4): 0.375 vs 4.5 / 12
  EXPECT_NEAR(e.D.at(1, 4), std::tanh(0.5), 1e-12);
}

TEST(DiagonalConstraint, EntriesInRangeAndRowMinimaOnDiagonal) {
  for (std::size_t n = 1; n <= 9; ++n) {
    auto d = diagonal_constraint_matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t arg = 0;
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_GE(d.D.at(i, j), std::tanh(0.5) - 1e-15);
        EXPECT_LE(d.D.at(i, j), 1.0);
        EXPECT_EQ(d.D.at(i, j), d.D.at(j, i));
        if (d.D.at(i, j) < d.D.at(i, arg)) arg = j;
      }
      EXPECT_EQ(arg, i);
    }
  }
}

TEST(DiagonalLoss, UniformWeightsClosedForm) {
  const std::size_t n1 = 3, n2 = 5;
  auto d = diagonal_constraint_matrix(n1, n2);
  Tensor tts = Tensor::full({n1, n2}, 1.0 / n1), asr = Tensor::full({n2, n1}, 1.0 / n2);
  double want = 0;
  for (double v : d.D.data()) want += (1.0 / n1 + 1.0 / n2) * v;
  want /= static_cast<double>(n1 * n2);
  EXPECT_NEAR(diagonal_attention_loss(tts, asr, d).item(), want, 1e-14);
}

TEST(DiagonalLoss, MassOnDiagonal) {
  const std::size_t n = 4;
  std::vector<double> id(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) id[i * n + i] = 1.0;
  Tensor w = Tensor::from({n, n}, id);
  EXPECT_NEAR(diagonal_attention_loss(w, w, diagonal_constraint_matrix(n, n)).item(), 2 * std::tanh(0.5) / n, 1e-14);
}

TEST(DiagonalLoss, GradientWithRespectToScores) {
  std::mt19937_64 rng(10);
  auto d = diagonal_constraint_matrix(4, 6);
  const double err = grad_check(
      [&](const Tensor& a) {
        auto o = bidirectional_attend(a, Tensor::zeros({4, 1}), Tensor::zeros({6, 1}));
        return diagonal_attention_loss(o.W12, o.W21, d);
      },
      rnd({4, 6}, rng, -2, 2));
  EXPECT_LT(err, 1e-4);
}

TEST(DiagonalLoss, ShapeMismatch) {
  EXPECT_THROW(diagonal_attention_loss(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), diagonal_constraint_matrix(2, 3)),
               DimensionError);
}

TEST(BiAttentionLayer, BothFormsProduceNormalizedWeights) {
  for (auto form : {AttentionForm::multiplicative, AttentionForm::additive}) {
    std::mt19937_64 rng(11);
    ParameterStore store;
    BiAttentionConfig cfg;
    cfg.d_a = 4;
    cfg.form = form;
    cfg.d_k1 = cfg.d_v1 = 3;
    cfg.d_k2 = cfg.d_v2 = 2;
    BiAttention att(store, "att", cfg, rng);
    Tensor k1 = rnd({5, 3}, rng), k2 = rnd({7, 2}, rng);
    auto o = att(k1, k2, k1, k2);
    for (std::size_t j = 0; j < 7; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < 5; ++i) s += o.W12.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(BiAttentionConfig, ZeroExtentIsConfigError) {
  BiAttentionConfig cfg;
  cfg.d_a = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
