// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ops.hpp
 * @brief  Differentiable tensor operations used by the rhythm encoder.
 *
 * Every op checks operand shapes (ShapeError naming both shapes) and the
 * finiteness of its result (NumericError). Ops record the graph only when
 * grad mode is enabled and at least one operand requires a gradient.
 */
#pragma once

#include <cstdint>
#include <span>

#include "rhythmid/rng.hpp"
#include "rhythmid/tensor.hpp"

namespace rhythmid {

/// [..., k] x [k, n] -> [..., n]. Leading dims of `a` are flattened.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Batched product of [G, m, k] with [G, k, n], or with [G, n, k] read
/// transposed when `transpose_b` is set.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

/// Elementwise sum. `b` may have the full shape of `a` or any trailing
/// suffix of it (bias rows, positional tables), broadcast over the rest.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> concat_last_dim(const Tensor<T>& a, const Tensor<T>& b);

/// Softmax over the last dim.
template <typename T>
Tensor<T> row_softmax(const Tensor<T>& x);

/// Softmax over the last dim after adding a constant mask (0 or -inf).
/// Scores [N, R, S] accept a mask [M, R, S] with N a multiple of M; score
/// slice n reads mask slice n / (N / M), so a per-sequence mask broadcasts
/// over attention heads. Rows masked out entirely yield all-zero weights.
template <typename T>
Tensor<T> row_softmax(const Tensor<T>& x, const Tensor<T>& additive_mask);

/// Normalizes over the last dim, then applies gain and bias of that size.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-5));

/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Rows of `table` ([V, d]) gathered by `ids`; result shape ids_shape + [d].
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids,
                           const Shape& ids_shape);

/// Inverted dropout: survivors scaled by 1/(1-rate). Identity when
/// `training` is false or rate is 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, bool training);

/// Mean over positions of [B, L, d] where mask[b*L + l] is nonzero.
template <typename T>
Tensor<T> mean_pool_masked(const Tensor<T>& x, std::span<const std::uint8_t> mask);

/// Mean cross-entropy of logits [B, C] against class indices.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// Sum of x * w for a constant weight vector of the same size.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::span<const T> weights);

/// [B, L, H*dh] -> [B*H, L, dh].
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads);

/// [B*H, L, dh] -> [B, L, H*dh].
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t heads);

}  // namespace rhythmid
