// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rhythmid/rng.hpp"
#include "rhythmid/tensor.hpp"

namespace rhythmid {

/// Row-major boolean matrix.
struct BoolMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> cells;

  bool operator()(std::size_t i, std::size_t j) const { return cells[i * cols + j] != 0; }
};

/// (i, j) is true iff |i - j| <= radius.
BoolMatrix local_attention_mask(std::size_t seq_len, std::size_t radius);

/// Additive mask [B, L, L]: 0 where the window allows (i, j) and both
/// positions are valid, -inf elsewhere. `valid` is [B, L].
template <typename T>
Tensor<T> attention_additive_mask(const BoolMatrix& window, std::span<const std::uint8_t> valid,
                                  std::size_t batch);

/// Windowed scaled dot-product attention over q, k, v of shape [B*H, L, dh],
/// evaluating only the 2*radius+1 band around each query. Equivalent to
/// bmm(row_softmax(scale * q k^T + mask), v) with attention_additive_mask,
/// including dropout on the attention weights when `training`.
template <typename T>
Tensor<T> local_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                          std::size_t radius, std::span<const std::uint8_t> valid,
                          std::size_t heads, T score_scale, double dropout_rate, Rng& rng,
                          bool training);

}  // namespace rhythmid
