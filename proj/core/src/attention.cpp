// SPDX-License-Identifier: Apache-2.0
#include "rhythmid/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "op_support.hpp"

namespace rhythmid {

using detail::grad_of;
using detail::make_result;
using detail::shape_mismatch;

BoolMatrix local_attention_mask(std::size_t seq_len, std::size_t radius) {
  BoolMatrix m{seq_len, seq_len, std::vector<std::uint8_t>(seq_len * seq_len, 0)};
  for (std::size_t i = 0; i < seq_len; ++i) {
    const std::size_t lo = i > radius ? i - radius : 0;
    const std::size_t hi = std::min(seq_len - 1, i + radius);
    for (std::size_t j = lo; j <= hi; ++j) m.cells[i * seq_len + j] = 1;
  }
  return m;
}

template <typename T>
Tensor<T> attention_additive_mask(const BoolMatrix& window, std::span<const std::uint8_t> valid,
                                  std::size_t batch) {
  const std::size_t len = window.rows;
  if (window.cols != len || valid.size() != batch * len) {
    throw ShapeError("attention_additive_mask: window " + std::to_string(window.rows) + "x" +
                     std::to_string(window.cols) + " with validity of size " +
                     std::to_string(valid.size()) + " for batch " + std::to_string(batch));
  }
  const T neg_inf = -std::numeric_limits<T>::infinity();
  std::vector<T> values(batch * len * len, neg_inf);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < len; ++i) {
      if (!valid[b * len + i]) continue;
      for (std::size_t j = 0; j < len; ++j) {
        if (window(i, j) && valid[b * len + j]) values[(b * len + i) * len + j] = T(0);
      }
    }
  }
  return Tensor<T>(Shape{batch, len, len}, std::move(values));
}

template <typename T>
Tensor<T> local_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                          std::size_t radius, std::span<const std::uint8_t> valid,
                          std::size_t heads, T score_scale, double dropout_rate, Rng& rng,
                          bool training) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    shape_mismatch("local_attention", q.shape(), k.shape());
  }
  const std::size_t groups = q.dim(0);
  const std::size_t len = q.dim(1);
  const std::size_t dh = q.dim(2);
  if (heads == 0 || groups % heads != 0 || valid.size() != (groups / heads) * len) {
    shape_mismatch("local_attention", q.shape(), Shape{valid.size()});
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw std::invalid_argument("local_attention: dropout rate must lie in [0, 1)");
  }
  const bool drop = training && dropout_rate > 0.0;
  const T keep_scale = T(1.0 / (1.0 - dropout_rate));
  const std::size_t band = 2 * radius + 1;

  // Slot w of query i addresses key i - radius + w. Unused slots hold 0.
  std::vector<T> probs(groups * len * band, T(0));
  std::vector<T> factors(drop ? probs.size() : 0, T(1));
  std::vector<T> out(groups * len * dh, T(0));
  std::vector<T> scores(band);
  auto qv = q.values();
  auto kv = k.values();
  auto vv = v.values();
  const T neg_inf = -std::numeric_limits<T>::infinity();

  for (std::size_t g = 0; g < groups; ++g) {
    const std::uint8_t* row_valid = valid.data() + (g / heads) * len;
    for (std::size_t i = 0; i < len; ++i) {
      T* p = probs.data() + (g * len + i) * band;
      if (!row_valid[i]) continue;
      const T* qi = qv.data() + (g * len + i) * dh;
      T mx = neg_inf;
      for (std::size_t w = 0; w < band; ++w) {
        scores[w] = neg_inf;
        const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i + w) - static_cast<std::ptrdiff_t>(radius);
        if (j < 0 || j >= static_cast<std::ptrdiff_t>(len) || !row_valid[j]) continue;
        const T* kj = kv.data() + (g * len + j) * dh;
        T dot = 0;
        for (std::size_t e = 0; e < dh; ++e) dot += qi[e] * kj[e];
        scores[w] = dot * score_scale;
        mx = std::max(mx, scores[w]);
      }
      T total = 0;
      for (std::size_t w = 0; w < band; ++w) {
        p[w] = scores[w] == neg_inf ? T(0) : std::exp(scores[w] - mx);
        total += p[w];
      }
      T* oi = out.data() + (g * len + i) * dh;
      for (std::size_t w = 0; w < band; ++w) {
        p[w] /= total;
        if (drop && p[w] != T(0)) {
          factors[(g * len + i) * band + w] = rng.uniform() < dropout_rate ? T(0) : keep_scale;
        }
        const T weight = drop ? p[w] * factors[(g * len + i) * band + w] : p[w];
        if (weight == T(0)) continue;
        const std::size_t j = i + w - radius;
        const T* vj = vv.data() + (g * len + j) * dh;
        for (std::size_t e = 0; e < dh; ++e) oi[e] += weight * vj[e];
      }
    }
  }

  return make_result<T>(
      q.shape(), std::move(out), "local_attention", {q.node(), k.node(), v.node()},
      [groups, len, dh, band, radius, score_scale, drop, probs = std::move(probs),
       factors = std::move(factors)](TensorNode<T>& self) {
        auto* gq = grad_of(self.parents[0]);
        auto* gk = grad_of(self.parents[1]);
        auto* gv = grad_of(self.parents[2]);
        const auto& qv = self.parents[0]->value;
        const auto& kv = self.parents[1]->value;
        const auto& vv = self.parents[2]->value;
        std::vector<T> dp(band);
        for (std::size_t g = 0; g < groups; ++g) {
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t base = (g * len + i) * band;
            const T* p = probs.data() + base;
            const T* dout = self.grad.data() + (g * len + i) * dh;
            T weighted = 0;
            for (std::size_t w = 0; w < band; ++w) {
              dp[w] = 0;
              if (p[w] == T(0)) continue;
              const std::size_t j = i + w - radius;
              const T f = drop ? factors[base + w] : T(1);
              const T* vj = vv.data() + (g * len + j) * dh;
              T dot = 0;
              for (std::size_t e = 0; e < dh; ++e) dot += dout[e] * vj[e];
              dp[w] = dot * f;
              weighted += p[w] * dp[w];
              if (gv) {
                T* gvj = gv->data() + (g * len + j) * dh;
                for (std::size_t e = 0; e < dh; ++e) gvj[e] += p[w] * f * dout[e];
              }
            }
            const T* qi = qv.data() + (g * len + i) * dh;
            for (std::size_t w = 0; w < band; ++w) {
              if (p[w] == T(0)) continue;
              const std::size_t j = i + w - radius;
              const T dz = p[w] * (dp[w] - weighted) * score_scale;
              const T* kj = kv.data() + (g * len + j) * dh;
              if (gq) {
                T* gqi = gq->data() + (g * len + i) * dh;
                for (std::size_t e = 0; e < dh; ++e) gqi[e] += dz * kj[e];
              }
              if (gk) {
                T* gkj = gk->data() + (g * len + j) * dh;
                for (std::size_t e = 0; e < dh; ++e) gkj[e] += dz * qi[e];
              }
            }
          }
        }
      });
}

template Tensor<float> attention_additive_mask(const BoolMatrix&, std::span<const std::uint8_t>,
                                               std::size_t);
template Tensor<double> attention_additive_mask(const BoolMatrix&, std::span<const std::uint8_t>,
                                                std::size_t);
template Tensor<float> local_attention(const Tensor<float>&, const Tensor<float>&,
                                       const Tensor<float>&, std::size_t,
                                       std::span<const std::uint8_t>, std::size_t, float, double,
                                       Rng&, bool);
template Tensor<double> local_attention(const Tensor<double>&, const Tensor<double>&,
                                        const Tensor<double>&, std::size_t,
                                        std::span<const std::uint8_t>, std::size_t, double,
                                        double, Rng&, bool);

}  // namespace rhythmid
