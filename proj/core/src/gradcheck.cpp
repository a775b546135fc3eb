// SPDX-License-Identifier: Apache-2.0
#include "rhythmid/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rhythmid/attention.hpp"
#include "rhythmid/encoder.hpp"
#include "rhythmid/fusion.hpp"
#include "rhythmid/ops.hpp"
#include "rhythmid/rng.hpp"

namespace rhythmid {

namespace {

double contract(const Tensor<double>& out, std::vector<double>& weights, std::uint64_t seed) {
  if (out.numel() == 1) return out[0];
  if (weights.size() != out.numel()) {
    Rng rng(seed);
    weights.resize(out.numel());
    for (auto& w : weights) w = rng.normal();
  }
  double s = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) s += weights[i] * out[i];
  return s;
}

}  // namespace

GradCheckResult grad_check(const GradFunction& fn, std::vector<Tensor<double>> inputs, double eps,
                           std::uint64_t projection_seed) {
  std::vector<double> weights;
  for (auto& t : inputs) t.zero_grad();
  {
    Tensor<double> out = fn();
    contract(out, weights, projection_seed);
    Tensor<double> loss =
        out.numel() == 1 ? sum(out) : weighted_sum(out, std::span<const double>(weights));
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradCheckResult result;
  NoGradGuard guard;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double original = values[j];
      values[j] = original + eps;
      const double up = contract(fn(), weights, projection_seed);
      values[j] = original - eps;
      const double down = contract(fn(), weights, projection_seed);
      values[j] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[i][j] - numeric) / std::max(1.0, std::abs(numeric));
      result.max_error = std::max(result.max_error, err);
      ++result.entries;
    }
  }
  return result;
}

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor<double>(std::move(shape), std::move(v), true);
}

// Keeps entries away from the ReLU kink so the finite difference is valid.
Tensor<double> away_from_zero(Tensor<double> t) {
  for (auto& x : t.mutable_values()) {
    if (std::abs(x) < 0.05) x = x < 0 ? -0.1 : 0.1;
  }
  return t;
}

using Case = std::function<GradCheckResult(std::uint64_t)>;

double check(const GradFunction& fn, std::vector<Tensor<double>> inputs, std::uint64_t seed) {
  return grad_check(fn, inputs, 1e-5, seed ^ 0x5eed).max_error;
}

std::vector<std::uint8_t> padded_valid(std::size_t batch, std::size_t len, Rng& rng) {
  std::vector<std::uint8_t> valid(batch * len, 1);
  for (std::size_t b = 1; b < batch; ++b) {
    const std::size_t keep = 1 + rng.below(len);
    for (std::size_t l = keep; l < len; ++l) valid[b * len + l] = 0;
  }
  return valid;
}

Batch tiny_batch(Rng& rng, std::size_t vocab, std::size_t speakers) {
  std::vector<std::vector<std::int32_t>> seqs = {{}, {}, {}};
  const std::size_t lens[] = {7, 4, 6};
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    for (std::size_t i = 0; i < lens[r]; ++i) {
      seqs[r].push_back(static_cast<std::int32_t>(1 + rng.below(vocab - 1)));
    }
  }
  std::vector<std::int32_t> labels;
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    labels.push_back(static_cast<std::int32_t>(rng.below(speakers)));
  }
  return make_batch(seqs, labels);
}

RhythmEncoderConfig tiny_config(AttentionImpl attention) {
  RhythmEncoderConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 2;
  c.ffn_dim = 16;
  c.attn_window_radius = 1;
  c.dropout_rate = 0.2;
  c.max_len = 16;
  c.vocab_size = 6;
  c.n_speakers = 3;
  c.attention = attention;
  return c;
}

std::vector<Tensor<double>> tensors_of(const std::vector<NamedParameter<double>>& params) {
  std::vector<Tensor<double>> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

double encoder_case(std::uint64_t seed, AttentionImpl attention) {
  Rng rng(seed);
  auto config = tiny_config(attention);
  RhythmEncoderModel<double> model(config, rng);
  Batch batch = tiny_batch(rng, config.vocab_size, config.n_speakers);
  const std::uint64_t dropout_seed = rng.next_u64();
  auto fn = [&] {
    Rng drop(dropout_seed);
    return cross_entropy(model.logits(batch, true, drop), batch.labels);
  };
  return check(fn, tensors_of(model.parameters()), seed);
}

double fusion_case(std::uint64_t seed) {
  Rng rng(seed);
  auto config = tiny_config(AttentionImpl::banded);
  RhythmEncoderModel<double> rhythm(config, rng);
  FusionConfig fc;
  fc.xvector_dim = 5;
  fc.projection_dim = 4;
  FusionAssembly<double> model(std::move(rhythm), fc, config.n_speakers, rng);
  Batch batch = tiny_batch(rng, config.vocab_size, config.n_speakers);
  batch.xvector_dim = fc.xvector_dim;
  batch.xvectors.resize(batch.rows * fc.xvector_dim);
  for (auto& x : batch.xvectors) x = rng.normal();
  const std::uint64_t dropout_seed = rng.next_u64();
  auto fn = [&] {
    Rng drop(dropout_seed);
    return cross_entropy(model.logits(batch, true, drop), batch.labels);
  };
  return check(fn, tensors_of(model.parameters()), seed);
}

double attention_case(std::uint64_t seed, double rate) {
  Rng rng(seed);
  const std::size_t batch = 2, heads = 2, len = 6, dh = 3;
  auto q = random_tensor({batch * heads, len, dh}, rng);
  auto k = random_tensor({batch * heads, len, dh}, rng);
  auto v = random_tensor({batch * heads, len, dh}, rng);
  auto valid = padded_valid(batch, len, rng);
  const std::uint64_t dropout_seed = rng.next_u64();
  auto fn = [&] {
    Rng drop(dropout_seed);
    return local_attention(q, k, v, 2, valid, heads, 1.0 / std::sqrt(double(dh)), rate, drop,
                           rate > 0.0);
  };
  return check(fn, {q, k, v}, seed);
}

std::map<std::string, Case> cases() {
  std::map<std::string, Case> all;
  all["matmul"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({4, 5}, rng);
    return grad_check([&] { return matmul(a, b); }, std::vector{a, b}, 1e-5, seed);
  };
  all["bmm"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor({3, 2, 4}, rng);
    auto b = random_tensor({3, 4, 5}, rng);
    return grad_check([&] { return bmm(a, b); }, std::vector{a, b}, 1e-5, seed);
  };
  all["bmm_transposed"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor({3, 2, 4}, rng);
    auto b = random_tensor({3, 5, 4}, rng);
    return grad_check([&] { return bmm(a, b, true); }, std::vector{a, b}, 1e-5, seed);
  };
  all["add"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({2, 3, 4}, rng);
    return grad_check([&] { return add(a, b); }, std::vector{a, b}, 1e-5, seed);
  };
  all["add_broadcast"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({4}, rng);
    return grad_check([&] { return add(a, b); }, std::vector{a, b}, 1e-5, seed);
  };
  all["scale"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor({3, 4}, rng);
    return grad_check([&] { return scale(a, 0.7); }, std::vector{a}, 1e-5, seed);
  };
  all["concat_last_dim"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor({2, 3}, rng);
    auto b = random_tensor({2, 4}, rng);
    return grad_check([&] { return concat_last_dim(a, b); }, std::vector{a, b}, 1e-5, seed);
  };
  all["row_softmax"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({2, 3, 5}, rng, 2.0);
    return grad_check([&] { return row_softmax(x); }, std::vector{x}, 1e-5, seed);
  };
  all["row_softmax_masked"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({4, 3, 3}, rng, 2.0);
    auto window = local_attention_mask(3, 1);
    auto valid = padded_valid(2, 3, rng);
    auto mask = attention_additive_mask<double>(window, valid, 2);
    return grad_check([&] { return row_softmax(x, mask); }, std::vector{x}, 1e-5, seed);
  };
  all["layer_norm"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 6}, rng);
    auto g = random_tensor({6}, rng);
    auto b = random_tensor({6}, rng);
    return grad_check([&] { return layer_norm(x, g, b); }, std::vector{x, g, b}, 1e-5, seed);
  };
  all["gelu"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 5}, rng, 2.0);
    return grad_check([&] { return gelu(x); }, std::vector{x}, 1e-5, seed);
  };
  all["relu"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = away_from_zero(random_tensor({3, 5}, rng));
    return grad_check([&] { return relu(x); }, std::vector{x}, 1e-5, seed);
  };
  all["embedding_lookup"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto table = random_tensor({5, 3}, rng);
    std::vector<std::int32_t> ids = {0, 4, 2, 2, 1, 4};
    return grad_check([&] { return embedding_lookup(table, ids, {2, 3}); }, std::vector{table},
                      1e-5, seed);
  };
  all["dropout"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({4, 5}, rng);
    const auto drop_seed = rng.next_u64();
    return grad_check(
        [&] {
          Rng drop(drop_seed);
          return dropout(x, 0.3, drop, true);
        },
        std::vector{x}, 1e-5, seed);
  };
  all["mean_pool_masked"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 4, 2}, rng);
    auto valid = padded_valid(3, 4, rng);
    return grad_check([&] { return mean_pool_masked(x, valid); }, std::vector{x}, 1e-5, seed);
  };
  all["cross_entropy"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto logits = random_tensor({4, 5}, rng, 2.0);
    std::vector<std::int32_t> targets = {0, 3, 4, 3};
    return grad_check([&] { return cross_entropy(logits, targets); }, std::vector{logits}, 1e-5,
                      seed);
  };
  all["sum"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 4}, rng);
    return grad_check([&] { return sum(x); }, std::vector{x}, 1e-5, seed);
  };
  all["weighted_sum"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 4}, rng);
    std::vector<double> w(12);
    for (auto& v : w) v = rng.normal();
    return grad_check([&] { return weighted_sum(x, std::span<const double>(w)); }, std::vector{x},
                      1e-5, seed);
  };
  all["split_heads"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({2, 3, 4}, rng);
    return grad_check([&] { return split_heads(x, 2); }, std::vector{x}, 1e-5, seed);
  };
  all["merge_heads"] = [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({4, 3, 2}, rng);
    return grad_check([&] { return merge_heads(x, 2); }, std::vector{x}, 1e-5, seed);
  };
  all["local_attention"] = [](std::uint64_t seed) {
    return GradCheckResult{attention_case(seed, 0.0), 0};
  };
  all["local_attention_dropout"] = [](std::uint64_t seed) {
    return GradCheckResult{attention_case(seed, 0.25), 0};
  };
  all["encoder_banded"] = [](std::uint64_t seed) {
    return GradCheckResult{encoder_case(seed, AttentionImpl::banded), 0};
  };
  all["encoder_dense"] = [](std::uint64_t seed) {
    return GradCheckResult{encoder_case(seed, AttentionImpl::dense), 0};
  };
  all["fusion"] = [](std::uint64_t seed) { return GradCheckResult{fusion_case(seed), 0}; };
  return all;
}

}  // namespace

std::map<std::string, double> run_gradcheck_suite(std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw std::invalid_argument("run_gradcheck_suite: no seeds");
  std::map<std::string, double> worst;
  for (const auto& [name, run] : cases()) {
    double err = 0.0;
    for (auto seed : seeds) err = std::max(err, run(seed).max_error);
    worst[name] = err;
  }
  return worst;
}

}  // namespace rhythmid
