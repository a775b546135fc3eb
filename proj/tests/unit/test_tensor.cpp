// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "rhythmid/gradcheck.hpp"
#include "rhythmid/ops.hpp"
#include "rhythmid/rng.hpp"
#include "rhythmid/tensor.hpp"

using namespace rhythmid;
using T64 = Tensor<double>;

namespace {

T64 rand_t(Shape s, Rng& rng, bool grad = true) {
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = rng.normal();
  return T64(std::move(s), std::move(v), grad);
}

}  // namespace

TEST(Tensor, ConstructorChecksSize) {
  EXPECT_THROW(T64({2, 3}, std::vector<double>(5)), ShapeError);
  T64 t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
}

TEST(Tensor, MatmulMatchesNaiveLoops) {
  Rng rng(1);
  auto a = rand_t({2, 3, 4}, rng, false);
  auto b = rand_t({4, 5}, rng, false);
  auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 5}));
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t j = 0; j < 5; ++j) {
      double ref = 0.0;
      for (std::size_t k = 0; k < 4; ++k) ref += a[r * 4 + k] * b[k * 5 + j];
      EXPECT_NEAR(c[r * 5 + j], ref, 1e-12);
    }
  }
}

TEST(Tensor, BmmTransposedEqualsExplicitTranspose) {
  Rng rng(2);
  auto a = rand_t({3, 2, 4}, rng, false);
  auto b = rand_t({3, 5, 4}, rng, false);
  std::vector<double> bt(3 * 4 * 5);
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t k = 0; k < 4; ++k) bt[g * 20 + k * 5 + i] = b[g * 20 + i * 4 + k];
  auto x = bmm(a, b, true);
  auto y = bmm(a, T64({3, 4, 5}, bt));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(x[i], y[i], 1e-12);
}

TEST(Tensor, ShapeErrors) {
  Rng rng(3);
  auto a = rand_t({2, 3}, rng);
  auto b = rand_t({4, 5}, rng);
  EXPECT_THROW(matmul(a, b), ShapeError);
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(split_heads(rand_t({2, 3, 5}, rng), 2), ShapeError);
}

TEST(Tensor, NonFiniteOutputThrows) {
  T64 big({1, 2}, {1e308, 1e308});
  EXPECT_THROW(add(big, big), NumericError);
}

TEST(Tensor, SoftmaxRowsSumToOne) {
  Rng rng(4);
  auto x = rand_t({3, 7}, rng);
  auto p = row_softmax(scale(x, 10.0));
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_GE(p[r * 7 + j], 0.0);
      s += p[r * 7 + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Tensor, FullyMaskedRowIsZero) {
  const double inf = std::numeric_limits<double>::infinity();
  T64 x({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  T64 mask({1, 2, 2}, {0.0, -inf, -inf, -inf});
  auto p = row_softmax(x, mask);
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_DOUBLE_EQ(p[1], 0.0);
  EXPECT_DOUBLE_EQ(p[2], 0.0);
  EXPECT_DOUBLE_EQ(p[3], 0.0);
}

TEST(Tensor, LayerNormStandardizes) {
  Rng rng(5);
  auto x = rand_t({4, 16}, rng);
  auto g = T64({16}, std::vector<double>(16, 1.0));
  auto b = T64({16}, std::vector<double>(16, 0.0));
  auto y = layer_norm(x, g, b, 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t j = 0; j < 16; ++j) m += y[r * 16 + j];
    m /= 16;
    for (std::size_t j = 0; j < 16; ++j) v += (y[r * 16 + j] - m) * (y[r * 16 + j] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 16, 1.0, 1e-9);
  }
}

TEST(Tensor, GeluReferenceValues) {
  T64 x({3}, {-1.0, 0.0, 1.0});
  auto y = gelu(x);
  EXPECT_NEAR(y[0], -0.15865525393145707, 1e-14);
  EXPECT_NEAR(y[1], 0.0, 1e-15);
  EXPECT_NEAR(y[2], 0.8413447460685429, 1e-14);
}

TEST(Tensor, CrossEntropyOfUniformLogitsIsLogC) {
  T64 logits({2, 4}, std::vector<double>(8, 0.3));
  std::vector<std::int32_t> t = {1, 3};
  EXPECT_NEAR(cross_entropy(logits, t).item(), std::log(4.0), 1e-12);
}

TEST(Tensor, SplitMergeAreInverse) {
  Rng rng(6);
  auto x = rand_t({2, 5, 6}, rng);
  auto y = merge_heads(split_heads(x, 3), 3);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(Tensor, DropoutIdentityOutsideTraining) {
  Rng rng(7);
  auto x = rand_t({3, 3}, rng);
  auto y = dropout(x, 0.5, rng, false);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(Tensor, DropoutKeepsExpectation) {
  Rng rng(8);
  T64 x({100000}, std::vector<double>(100000, 1.0));
  auto y = dropout(x, 0.3, rng, true);
  double s = 0.0;
  std::size_t zeros = 0;
  for (double v : y.values()) {
    s += v;
    zeros += v == 0.0;
  }
  EXPECT_NEAR(s / 100000, 1.0, 0.02);
  EXPECT_NEAR(zeros / 100000.0, 0.3, 0.01);
}

TEST(Tensor, GradientAccumulatesOverReuse) {
  T64 x({2}, {1.5, -2.0}, true);
  // y = sum(x * 3 + x) => dy/dx = 4
  auto y = sum(add(scale(x, 3.0), x));
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Tensor, NoGradGuardRecordsNothing) {
  T64 x({2}, {1.0, 2.0}, true);
  {
    NoGradGuard guard;
    auto y = sum(scale(x, 2.0));
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node()->parents.empty());
  }
  EXPECT_TRUE(grad_enabled());
}

TEST(Tensor, MeanPoolRejectsEmptyRow) {
  T64 x({2, 2, 1}, {1, 2, 3, 4});
  std::vector<std::uint8_t> mask = {1, 1, 0, 0};
  EXPECT_THROW(mean_pool_masked(x, mask), std::invalid_argument);
}

TEST(Tensor, EmbeddingRejectsOutOfRangeIds) {
  T64 table({3, 2}, std::vector<double>(6, 0.0));
  std::vector<std::int32_t> ids = {0, 3};
  EXPECT_THROW(embedding_lookup(table, ids, {2}), std::out_of_range);
}

TEST(GradCheck, DetectsWrongGradient) {
  // A hand-built op whose backward is deliberately off by a factor of two.
  T64 x({3}, {0.5, -1.0, 2.0}, true);
  auto fn = [&] {
    auto y = scale(x, 3.0);
    if (y.requires_grad()) {
      auto parent = x.node();
      y.node()->backward = [parent](TensorNode<double>& self) {
        parent->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) parent->grad[i] += 6.0 * self.grad[i];
      };
    }
    return y;
  };
  EXPECT_GT(grad_check(fn, {x}).max_error, 0.5);
  EXPECT_LT(grad_check([&] { return scale(x, 3.0); }, {x}).max_error, 1e-8);
}
