// SPDX-License-Identifier: Apache-2.0
#include "rhythmid/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "op_support.hpp"

namespace rhythmid {

using detail::ConstMatrixMap;
using detail::grad_of;
using detail::make_result;
using detail::MatrixMap;
using detail::shape_mismatch;

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    shape_mismatch("matmul", a.shape(), b.shape());
  }
  const std::size_t k = b.dim(0);
  const std::size_t n = b.dim(1);
  const std::size_t m = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;

  std::vector<T> out(m * n);
  MatrixMap<T>(out.data(), m, n).noalias() =
      ConstMatrixMap<T>(a.values().data(), m, k) * ConstMatrixMap<T>(b.values().data(), k, n);

  return make_result<T>(
      std::move(out_shape), std::move(out), "matmul", {a.node(), b.node()},
      [m, k, n](TensorNode<T>& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        ConstMatrixMap<T> dc(self.grad.data(), m, n);
        if (auto* ga = grad_of(pa)) {
          MatrixMap<T>(ga->data(), m, k).noalias() +=
              dc * ConstMatrixMap<T>(pb->value.data(), k, n).transpose();
        }
        if (auto* gb = grad_of(pb)) {
          MatrixMap<T>(gb->data(), k, n).noalias() +=
              ConstMatrixMap<T>(pa->value.data(), m, k).transpose() * dc;
        }
      });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1))) {
    shape_mismatch("bmm", a.shape(), b.shape());
  }
  const std::size_t g = a.dim(0);
  const std::size_t m = a.dim(1);
  const std::size_t k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);

  std::vector<T> out(g * m * n);
  for (std::size_t s = 0; s < g; ++s) {
    ConstMatrixMap<T> as(a.values().data() + s * m * k, m, k);
    MatrixMap<T> cs(out.data() + s * m * n, m, n);
    if (transpose_b) {
      cs.noalias() = as * ConstMatrixMap<T>(b.values().data() + s * n * k, n, k).transpose();
    } else {
      cs.noalias() = as * ConstMatrixMap<T>(b.values().data() + s * k * n, k, n);
    }
  }

  return make_result<T>(
      Shape{g, m, n}, std::move(out), "bmm", {a.node(), b.node()},
      [g, m, k, n, transpose_b](TensorNode<T>& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        auto* ga = grad_of(pa);
        auto* gb = grad_of(pb);
        for (std::size_t s = 0; s < g; ++s) {
          ConstMatrixMap<T> dc(self.grad.data() + s * m * n, m, n);
          ConstMatrixMap<T> as(pa->value.data() + s * m * k, m, k);
          if (transpose_b) {
            ConstMatrixMap<T> bs(pb->value.data() + s * n * k, n, k);
            if (ga) MatrixMap<T>(ga->data() + s * m * k, m, k).noalias() += dc * bs;
            if (gb) MatrixMap<T>(gb->data() + s * n * k, n, k).noalias() += dc.transpose() * as;
          } else {
            ConstMatrixMap<T> bs(pb->value.data() + s * k * n, k, n);
            if (ga) MatrixMap<T>(ga->data() + s * m * k, m, k).noalias() += dc * bs.transpose();
            if (gb) MatrixMap<T>(gb->data() + s * k * n, k, n).noalias() += as.transpose() * dc;
          }
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  bool suffix = bs.size() <= as.size() && b.numel() > 0;
  for (std::size_t i = 0; suffix && i < bs.size(); ++i) {
    suffix = bs[bs.size() - 1 - i] == as[as.size() - 1 - i];
  }
  if (!suffix) shape_mismatch("add", as, bs);

  const std::size_t n = a.numel();
  const std::size_t bn = b.numel();
  std::vector<T> out(n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; i += bn) {
    for (std::size_t j = 0; j < bn; ++j) out[i + j] = av[i + j] + bv[j];
  }

  return make_result<T>(as, std::move(out), "add", {a.node(), b.node()},
                        [n, bn](TensorNode<T>& self) {
                          if (auto* ga = grad_of(self.parents[0])) {
                            for (std::size_t i = 0; i < n; ++i) (*ga)[i] += self.grad[i];
                          }
                          if (auto* gb = grad_of(self.parents[1])) {
                            for (std::size_t i = 0; i < n; i += bn) {
                              for (std::size_t j = 0; j < bn; ++j) (*gb)[j] += self.grad[i + j];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(a.shape(), std::move(out), "scale", {a.node()},
                        [factor](TensorNode<T>& self) {
                          if (auto* ga = grad_of(self.parents[0])) {
                            for (std::size_t i = 0; i < ga->size(); ++i) {
                              (*ga)[i] += factor * self.grad[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> concat_last_dim(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    shape_mismatch("concat_last_dim", a.shape(), b.shape());
  }
  const std::size_t da = a.shape().back();
  const std::size_t db = b.shape().back();
  const std::size_t rows = da ? a.numel() / da : b.numel() / db;
  Shape out_shape = a.shape();
  out_shape.back() = da + db;

  std::vector<T> out(rows * (da + db));
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.begin() + r * da, da, out.begin() + r * (da + db));
    std::copy_n(bv.begin() + r * db, db, out.begin() + r * (da + db) + da);
  }

  return make_result<T>(std::move(out_shape), std::move(out), "concat_last_dim",
                        {a.node(), b.node()}, [rows, da, db](TensorNode<T>& self) {
                          auto* ga = grad_of(self.parents[0]);
                          auto* gb = grad_of(self.parents[1]);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* g = self.grad.data() + r * (da + db);
                            if (ga) {
                              for (std::size_t j = 0; j < da; ++j) (*ga)[r * da + j] += g[j];
                            }
                            if (gb) {
                              for (std::size_t j = 0; j < db; ++j) (*gb)[r * db + j] += g[da + j];
                            }
                          }
                        });
}

namespace {

template <typename T>
void softmax_backward(TensorNode<T>& self, std::size_t width) {
  auto* gx = grad_of(self.parents[0]);
  if (!gx) return;
  const std::size_t rows = self.value.size() / width;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* y = self.value.data() + r * width;
    const T* dy = self.grad.data() + r * width;
    T dot = 0;
    for (std::size_t j = 0; j < width; ++j) dot += y[j] * dy[j];
    T* dx = gx->data() + r * width;
    for (std::size_t j = 0; j < width; ++j) dx[j] += y[j] * (dy[j] - dot);
  }
}

// Softmax of one row of `width` scores with an optional additive mask row.
template <typename T>
void softmax_row(const T* x, const T* mask, T* y, std::size_t width) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < width; ++j) {
    const T z = mask ? x[j] + mask[j] : x[j];
    mx = std::max(mx, z);
  }
  if (mx == -std::numeric_limits<T>::infinity()) {
    std::fill_n(y, width, T(0));
    return;
  }
  T total = 0;
  for (std::size_t j = 0; j < width; ++j) {
    const T z = mask ? x[j] + mask[j] : x[j];
    y[j] = std::exp(z - mx);
    total += y[j];
  }
  for (std::size_t j = 0; j < width; ++j) y[j] /= total;
}

}  // namespace

template <typename T>
Tensor<T> row_softmax(const Tensor<T>& x) {
  if (x.rank() == 0 || x.shape().back() == 0) shape_mismatch("row_softmax", x.shape(), x.shape());
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    softmax_row<T>(x.values().data() + r * width, nullptr, out.data() + r * width, width);
  }
  return make_result<T>(x.shape(), std::move(out), "row_softmax", {x.node()},
                        [width](TensorNode<T>& self) { softmax_backward(self, width); });
}

template <typename T>
Tensor<T> row_softmax(const Tensor<T>& x, const Tensor<T>& additive_mask) {
  const auto& m = additive_mask;
  if (x.rank() < 2 || (m.rank() != 2 && m.rank() != 3)) {
    shape_mismatch("row_softmax", x.shape(), m.shape());
  }
  const std::size_t width = x.shape().back();
  const std::size_t height = x.shape()[x.rank() - 2];
  const std::size_t mask_slices = m.rank() == 3 ? m.dim(0) : 1;
  if (m.shape()[m.rank() - 1] != width || m.shape()[m.rank() - 2] != height || width == 0 ||
      height == 0) {
    shape_mismatch("row_softmax", x.shape(), m.shape());
  }
  const std::size_t slices = x.numel() / (width * height);
  if (mask_slices == 0 || slices % mask_slices != 0) {
    shape_mismatch("row_softmax", x.shape(), m.shape());
  }
  const std::size_t group = slices / mask_slices;

  std::vector<T> out(x.numel());
  const std::size_t slice_size = width * height;
  for (std::size_t s = 0; s < slices; ++s) {
    const T* mask_slice = m.values().data() + (s / group) * slice_size;
    for (std::size_t r = 0; r < height; ++r) {
      const std::size_t off = s * slice_size + r * width;
      softmax_row<T>(x.values().data() + off, mask_slice + r * width, out.data() + off, width);
    }
  }
  // The mask is a constant; it is deliberately not a graph parent.
  return make_result<T>(x.shape(), std::move(out), "row_softmax", {x.node()},
                        [width](TensorNode<T>& self) { softmax_backward(self, width); });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (x.rank() == 0 || gain.rank() != 1 || bias.rank() != 1 ||
      gain.dim(0) != x.shape().back() || bias.dim(0) != x.shape().back()) {
    shape_mismatch("layer_norm", x.shape(), gain.shape());
  }
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mean) * rstd[r];
      out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }

  return make_result<T>(
      x.shape(), std::move(out), "layer_norm", {x.node(), gain.node(), bias.node()},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](TensorNode<T>& self) {
        auto* gx = grad_of(self.parents[0]);
        auto* gg = grad_of(self.parents[1]);
        auto* gb = grad_of(self.parents[2]);
        const auto& gain_v = self.parents[1]->value;
        std::vector<T> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* dy = self.grad.data() + r * d;
          const T* xh = xhat.data() + r * d;
          if (gg) {
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += dy[j] * xh[j];
          }
          if (gb) {
            for (std::size_t j = 0; j < d; ++j) (*gb)[j] += dy[j];
          }
          if (gx) {
            T mean_dxhat = 0;
            T mean_dxhat_xhat = 0;
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = dy[j] * gain_v[j];
              mean_dxhat += dxhat[j];
              mean_dxhat_xhat += dxhat[j] * xh[j];
            }
            mean_dxhat /= T(d);
            mean_dxhat_xhat /= T(d);
            T* dx = gx->data() + r * d;
            for (std::size_t j = 0; j < d; ++j) {
              dx[j] += rstd[r] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  std::vector<T> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
  }
  return make_result<T>(x.shape(), std::move(out), "gelu", {x.node()},
                        [inv_sqrt2](TensorNode<T>& self) {
                          auto* gx = grad_of(self.parents[0]);
                          if (!gx) return;
                          const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
                          const auto& xv = self.parents[0]->value;
                          for (std::size_t i = 0; i < xv.size(); ++i) {
                            const T cdf = T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
                            const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * xv[i] * xv[i]);
                            (*gx)[i] += self.grad[i] * (cdf + xv[i] * pdf);
                          }
                        });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  return make_result<T>(x.shape(), std::move(out), "relu", {x.node()},
                        [](TensorNode<T>& self) {
                          auto* gx = grad_of(self.parents[0]);
                          if (!gx) return;
                          const auto& xv = self.parents[0]->value;
                          for (std::size_t i = 0; i < xv.size(); ++i) {
                            if (xv[i] > T(0)) (*gx)[i] += self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids,
                           const Shape& ids_shape) {
  if (table.rank() != 2 || shape_numel(ids_shape) != ids.size()) {
    shape_mismatch("embedding_lookup", table.shape(), ids_shape);
  }
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding_lookup: token id " + std::to_string(ids[i]) +
                              " outside vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(tv.begin() + ids[i] * d, d, out.begin() + i * d);
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return make_result<T>(std::move(out_shape), std::move(out), "embedding_lookup",
                        {table.node()}, [d, saved = std::move(saved)](TensorNode<T>& self) {
                          auto* gt = grad_of(self.parents[0]);
                          if (!gt) return;
                          for (std::size_t i = 0; i < saved.size(); ++i) {
                            T* row = gt->data() + saved[i] * d;
                            const T* g = self.grad.data() + i * d;
                            for (std::size_t j = 0; j < d; ++j) row[j] += g[j];
                          }
                        });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::vector<T> factors(x.numel());
  std::vector<T> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    factors[i] = rng.uniform() < rate ? T(0) : keep_scale;
    out[i] = xv[i] * factors[i];
  }
  return make_result<T>(x.shape(), std::move(out), "dropout", {x.node()},
                        [factors = std::move(factors)](TensorNode<T>& self) {
                          auto* gx = grad_of(self.parents[0]);
                          if (!gx) return;
                          for (std::size_t i = 0; i < factors.size(); ++i) {
                            (*gx)[i] += self.grad[i] * factors[i];
                          }
                        });
}

template <typename T>
Tensor<T> mean_pool_masked(const Tensor<T>& x, std::span<const std::uint8_t> mask) {
  if (x.rank() != 3 || mask.size() != x.dim(0) * x.dim(1)) {
    shape_mismatch("mean_pool_masked", x.shape(), Shape{mask.size()});
  }
  const std::size_t batch = x.dim(0);
  const std::size_t len = x.dim(1);
  const std::size_t d = x.dim(2);
  std::vector<T> inv_count(batch);
  std::vector<T> out(batch * d, T(0));
  auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t count = 0;
    for (std::size_t l = 0; l < len; ++l) {
      if (!mask[b * len + l]) continue;
      ++count;
      const T* row = xv.data() + (b * len + l) * d;
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] += row[j];
    }
    if (count == 0) {
      throw std::invalid_argument("mean_pool_masked: row " + std::to_string(b) +
                                  " has no valid positions");
    }
    inv_count[b] = T(1) / T(count);
    for (std::size_t j = 0; j < d; ++j) out[b * d + j] *= inv_count[b];
  }
  std::vector<std::uint8_t> saved(mask.begin(), mask.end());
  return make_result<T>(
      Shape{batch, d}, std::move(out), "mean_pool_masked", {x.node()},
      [batch, len, d, inv_count = std::move(inv_count), saved = std::move(saved)](
          TensorNode<T>& self) {
        auto* gx = grad_of(self.parents[0]);
        if (!gx) return;
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t l = 0; l < len; ++l) {
            if (!saved[b * len + l]) continue;
            T* row = gx->data() + (b * len + l) * d;
            for (std::size_t j = 0; j < d; ++j) row[j] += self.grad[b * d + j] * inv_count[b];
          }
        }
      });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
  if (logits.rank() != 2 || targets.size() != logits.dim(0) || targets.empty()) {
    shape_mismatch("cross_entropy", logits.shape(), Shape{targets.size()});
  }
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  std::vector<T> probs(logits.numel());
  T total = 0;
  auto lv = logits.values();
  for (std::size_t b = 0; b < batch; ++b) {
    if (targets[b] < 0 || static_cast<std::size_t>(targets[b]) >= classes) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[b]) +
                              " outside " + std::to_string(classes) + " classes");
    }
    const T* z = lv.data() + b * classes;
    T mx = *std::max_element(z, z + classes);
    T sum_exp = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[b * classes + c] = std::exp(z[c] - mx);
      sum_exp += probs[b * classes + c];
    }
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= sum_exp;
    total += mx + std::log(sum_exp) - z[targets[b]];
  }
  std::vector<std::int32_t> saved(targets.begin(), targets.end());
  return make_result<T>(
      Shape{}, std::vector<T>{total / T(batch)}, "cross_entropy", {logits.node()},
      [batch, classes, probs = std::move(probs), saved = std::move(saved)](TensorNode<T>& self) {
        auto* gl = grad_of(self.parents[0]);
        if (!gl) return;
        const T g = self.grad[0] / T(batch);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < classes; ++c) {
            T p = probs[b * classes + c];
            if (static_cast<std::int32_t>(c) == saved[b]) p -= T(1);
            (*gl)[b * classes + c] += g * p;
          }
        }
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.values()) total += v;
  return make_result<T>(Shape{}, std::vector<T>{total}, "sum", {x.node()},
                        [](TensorNode<T>& self) {
                          auto* gx = grad_of(self.parents[0]);
                          if (!gx) return;
                          for (auto& g : *gx) g += self.grad[0];
                        });
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::span<const T> weights) {
  if (weights.size() != x.numel()) {
    shape_mismatch("weighted_sum", x.shape(), Shape{weights.size()});
  }
  T total = 0;
  auto xv = x.values();
  for (std::size_t i = 0; i < weights.size(); ++i) total += xv[i] * weights[i];
  std::vector<T> saved(weights.begin(), weights.end());
  return make_result<T>(Shape{}, std::vector<T>{total}, "weighted_sum", {x.node()},
                        [saved = std::move(saved)](TensorNode<T>& self) {
                          auto* gx = grad_of(self.parents[0]);
                          if (!gx) return;
                          for (std::size_t i = 0; i < saved.size(); ++i) {
                            (*gx)[i] += self.grad[0] * saved[i];
                          }
                        });
}

namespace {

// Index maps between [B, L, H*dh] and [B*H, L, dh].
template <typename T, bool kSplit>
void permute_heads(const T* src, T* dst, std::size_t batch, std::size_t len, std::size_t heads,
                   std::size_t head_dim) {
  const std::size_t d = heads * head_dim;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t merged = (b * len + l) * d + h * head_dim;
        const std::size_t split = ((b * heads + h) * len + l) * head_dim;
        for (std::size_t e = 0; e < head_dim; ++e) {
          if constexpr (kSplit) {
            dst[split + e] += src[merged + e];
          } else {
            dst[merged + e] += src[split + e];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.dim(2) % heads != 0) {
    shape_mismatch("split_heads", x.shape(), Shape{heads});
  }
  const std::size_t batch = x.dim(0);
  const std::size_t len = x.dim(1);
  const std::size_t head_dim = x.dim(2) / heads;
  std::vector<T> out(x.numel(), T(0));
  permute_heads<T, true>(x.values().data(), out.data(), batch, len, heads, head_dim);
  return make_result<T>(Shape{batch * heads, len, head_dim}, std::move(out), "split_heads",
                        {x.node()}, [batch, len, heads, head_dim](TensorNode<T>& self) {
                          if (auto* gx = grad_of(self.parents[0])) {
                            permute_heads<T, false>(self.grad.data(), gx->data(), batch, len,
                                                    heads, head_dim);
                          }
                        });
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.dim(0) % heads != 0) {
    shape_mismatch("merge_heads", x.shape(), Shape{heads});
  }
  const std::size_t batch = x.dim(0) / heads;
  const std::size_t len = x.dim(1);
  const std::size_t head_dim = x.dim(2);
  std::vector<T> out(x.numel(), T(0));
  permute_heads<T, false>(x.values().data(), out.data(), batch, len, heads, head_dim);
  return make_result<T>(Shape{batch, len, heads * head_dim}, std::move(out), "merge_heads",
                        {x.node()}, [batch, len, heads, head_dim](TensorNode<T>& self) {
                          if (auto* gx = grad_of(self.parents[0])) {
                            permute_heads<T, true>(self.grad.data(), gx->data(), batch, len,
                                                   heads, head_dim);
                          }
                        });
}

#define RHYTHMID_INSTANTIATE_OPS(T)                                                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> concat_last_dim(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> row_softmax(const Tensor<T>&);                                           \
  template Tensor<T> row_softmax(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> gelu(const Tensor<T>&);                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                  \
  template Tensor<T> embedding_lookup(const Tensor<T>&, std::span<const std::int32_t>,        \
                                      const Shape&);                                          \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&, bool);                           \
  template Tensor<T> mean_pool_masked(const Tensor<T>&, std::span<const std::uint8_t>);       \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>);          \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> weighted_sum(const Tensor<T>&, std::span<const T>);                      \
  template Tensor<T> split_heads(const Tensor<T>&, std::size_t);                              \
  template Tensor<T> merge_heads(const Tensor<T>&, std::size_t);

RHYTHMID_INSTANTIATE_OPS(float)
RHYTHMID_INSTANTIATE_OPS(double)

#undef RHYTHMID_INSTANTIATE_OPS

}  // namespace rhythmid
