// SPDX-License-Identifier: Apache-2.0
#include "rhythmid/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rhythmid/ops.hpp"

namespace rhythmid {

void RhythmEncoderConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("invalid encoder config: " + what);
  };
  if (d_model == 0) fail("d_model must be positive");
  if (n_heads == 0 || d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
         std::to_string(n_heads));
  }
  if (n_layers == 0) fail("n_layers must be positive");
  if (ffn_dim == 0) fail("ffn_dim must be positive");
  if (max_len == 0) fail("max_len must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0, 1)");
  if (vocab_size < 4) fail("vocab_size must cover the reserved ids and one symbol");
  if (n_speakers == 0) fail("n_speakers must be positive");
}

void Batch::validate() const {
  if (rows == 0 || len == 0) throw std::invalid_argument("empty batch");
  if (tokens.size() != rows * len || valid.size() != rows * len) {
    throw ShapeError("batch token/validity buffers do not match " + std::to_string(rows) + "x" +
                     std::to_string(len));
  }
  if (!labels.empty() && labels.size() != rows) {
    throw ShapeError("batch has " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    auto first = valid.begin() + static_cast<std::ptrdiff_t>(r * len);
    if (std::none_of(first, first + static_cast<std::ptrdiff_t>(len),
                     [](std::uint8_t v) { return v != 0; })) {
      throw std::invalid_argument("batch row " + std::to_string(r) + " is entirely padding");
    }
  }
  if (xvector_dim != 0 && xvectors.size() != rows * xvector_dim) {
    throw ShapeError("batch x-vector buffer does not match rows x dim");
  }
}

Batch make_batch(std::span<const std::vector<std::int32_t>> sequences,
                 std::span<const std::int32_t> labels, std::int32_t pad_id) {
  if (!labels.empty() && labels.size() != sequences.size()) {
    throw std::invalid_argument("make_batch: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(sequences.size()) + " sequences");
  }
  Batch batch;
  batch.rows = sequences.size();
  for (const auto& s : sequences) {
    if (s.empty()) throw std::invalid_argument("make_batch: empty sequence");
    batch.len = std::max(batch.len, s.size());
  }
  batch.tokens.assign(batch.rows * batch.len, pad_id);
  batch.valid.assign(batch.rows * batch.len, 0);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    std::copy(sequences[r].begin(), sequences[r].end(), batch.tokens.begin() + r * batch.len);
    std::fill_n(batch.valid.begin() + r * batch.len, sequences[r].size(), 1);
  }
  batch.labels.assign(labels.begin(), labels.end());
  return batch;
}

template <typename T>
std::vector<T> positional_encoding(std::size_t max_len, std::size_t d_model) {
  std::vector<T> table(max_len * d_model);
  for (std::size_t p = 0; p < max_len; ++p) {
    for (std::size_t c = 0; c < d_model; ++c) {
      const double exponent = static_cast<double>(c - c % 2) / static_cast<double>(d_model);
      const double angle = static_cast<double>(p) / std::pow(10000.0, exponent);
      table[p * d_model + c] = static_cast<T>(c % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return table;
}

template <typename T>
Tensor<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> values(fan_in * fan_out);
  for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(Shape{fan_in, fan_out}, std::move(values), true);
}

namespace {

template <typename T>
Tensor<T> zeros_param(std::size_t n) {
  return Tensor<T>::zeros(Shape{n}, true);
}

template <typename T>
Tensor<T> ones_param(std::size_t n) {
  return Tensor<T>(Shape{n}, std::vector<T>(n, T(1)), true);
}

template <typename T>
Tensor<T> copy_param(const Tensor<T>& t) {
  return Tensor<T>(t.shape(), std::vector<T>(t.values().begin(), t.values().end()), true);
}

}  // namespace

template <typename T>
RhythmEncoderModel<T>::RhythmEncoderModel(const RhythmEncoderConfig& config, Rng& rng)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  const double sigma = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<T> table(config_.vocab_size * d);
  for (auto& v : table) v = static_cast<T>(rng.normal(0.0, sigma));
  embedding_ = Tensor<T>(Shape{config_.vocab_size, d}, std::move(table), true);

  layers_.resize(config_.n_layers);
  for (auto& layer : layers_) {
    layer.wq = xavier_uniform<T>(d, d, rng);
    layer.bq = zeros_param<T>(d);
    layer.wk = xavier_uniform<T>(d, d, rng);
    layer.bk = zeros_param<T>(d);
    layer.wv = xavier_uniform<T>(d, d, rng);
    layer.bv = zeros_param<T>(d);
    layer.wo = xavier_uniform<T>(d, d, rng);
    layer.bo = zeros_param<T>(d);
    layer.ln1_gain = ones_param<T>(d);
    layer.ln1_bias = zeros_param<T>(d);
    layer.w1 = xavier_uniform<T>(d, config_.ffn_dim, rng);
    layer.b1 = zeros_param<T>(config_.ffn_dim);
    layer.w2 = xavier_uniform<T>(config_.ffn_dim, d, rng);
    layer.b2 = zeros_param<T>(d);
    layer.ln2_gain = ones_param<T>(d);
    layer.ln2_bias = zeros_param<T>(d);
  }
  head_w_ = xavier_uniform<T>(d, config_.n_speakers, rng);
  head_b_ = zeros_param<T>(config_.n_speakers);
  positions_ = positional_encoding<T>(config_.max_len, d);
}

template <typename T>
std::vector<NamedParameter<T>> RhythmEncoderModel<T>::parameters() const {
  std::vector<NamedParameter<T>> out;
  out.push_back({"embedding", embedding_});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    out.push_back({p + "attn.wq", l.wq});
    out.push_back({p + "attn.bq", l.bq});
    out.push_back({p + "attn.wk", l.wk});
    out.push_back({p + "attn.bk", l.bk});
    out.push_back({p + "attn.wv", l.wv});
    out.push_back({p + "attn.bv", l.bv});
    out.push_back({p + "attn.wo", l.wo});
    out.push_back({p + "attn.bo", l.bo});
    out.push_back({p + "ln1.gain", l.ln1_gain});
    out.push_back({p + "ln1.bias", l.ln1_bias});
    out.push_back({p + "ffn.w1", l.w1});
    out.push_back({p + "ffn.b1", l.b1});
    out.push_back({p + "ffn.w2", l.w2});
    out.push_back({p + "ffn.b2", l.b2});
    out.push_back({p + "ln2.gain", l.ln2_gain});
    out.push_back({p + "ln2.bias", l.ln2_bias});
  }
  out.push_back({"head.weight", head_w_});
  out.push_back({"head.bias", head_b_});
  return out;
}

template <typename T>
RhythmEncoderModel<T> RhythmEncoderModel<T>::clone() const {
  RhythmEncoderModel copy;
  copy.config_ = config_;
  copy.embedding_ = copy_param(embedding_);
  copy.layers_.reserve(layers_.size());
  for (const auto& l : layers_) {
    copy.layers_.push_back({copy_param(l.wq), copy_param(l.bq), copy_param(l.wk),
                            copy_param(l.bk), copy_param(l.wv), copy_param(l.bv),
                            copy_param(l.wo), copy_param(l.bo), copy_param(l.ln1_gain),
                            copy_param(l.ln1_bias), copy_param(l.w1), copy_param(l.b1),
                            copy_param(l.w2), copy_param(l.b2), copy_param(l.ln2_gain),
                            copy_param(l.ln2_bias)});
  }
  copy.head_w_ = copy_param(head_w_);
  copy.head_b_ = copy_param(head_b_);
  copy.positions_ = positions_;
  return copy;
}

template <typename T>
Tensor<T> RhythmEncoderModel<T>::encode(const Batch& batch, bool training, Rng& rng) const {
  batch.validate();
  const std::size_t d = config_.d_model;
  const std::size_t heads = config_.n_heads;
  const std::size_t len = batch.len;
  if (len > config_.max_len) {
    throw std::invalid_argument("sequence length " + std::to_string(len) + " exceeds max_len " +
                                std::to_string(config_.max_len));
  }
  const double rate = config_.dropout_rate;

  Tensor<T> x = embedding_lookup(embedding_, batch.tokens, Shape{batch.rows, len});
  x = scale(x, static_cast<T>(std::sqrt(static_cast<double>(d))));
  Tensor<T> pe(Shape{len, d}, std::vector<T>(positions_.begin(), positions_.begin() + len * d));
  x = dropout(add(x, pe), rate, rng, training);

  Tensor<T> dense_mask;
  if (config_.attention == AttentionImpl::dense) {
    dense_mask = attention_additive_mask<T>(local_attention_mask(len, config_.attn_window_radius),
                                            batch.valid, batch.rows);
  }
  const T score_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(config_.head_dim())));

  for (const auto& l : layers_) {
    Tensor<T> q = split_heads(add(matmul(x, l.wq), l.bq), heads);
    Tensor<T> k = split_heads(add(matmul(x, l.wk), l.bk), heads);
    Tensor<T> v = split_heads(add(matmul(x, l.wv), l.bv), heads);
    Tensor<T> context;
    if (config_.attention == AttentionImpl::banded) {
      context = local_attention(q, k, v, config_.attn_window_radius, batch.valid, heads,
                                score_scale, rate, rng, training);
    } else {
      Tensor<T> weights = row_softmax(scale(bmm(q, k, true), score_scale), dense_mask);
      context = bmm(dropout(weights, rate, rng, training), v);
    }
    Tensor<T> attended = add(matmul(merge_heads(context, heads), l.wo), l.bo);
    x = layer_norm(add(x, attended), l.ln1_gain, l.ln1_bias);

    Tensor<T> hidden = add(matmul(x, l.w1), l.b1);
    hidden = config_.activation == Activation::gelu ? gelu(hidden) : relu(hidden);
    Tensor<T> ffn = dropout(add(matmul(hidden, l.w2), l.b2), rate, rng, training);
    x = layer_norm(add(x, ffn), l.ln2_gain, l.ln2_bias);
  }
  return x;
}

template <typename T>
typename RhythmEncoderModel<T>::Output RhythmEncoderModel<T>::forward(const Batch& batch,
                                                                      bool training,
                                                                      Rng& rng) const {
  Tensor<T> pooled = mean_pool_masked(encode(batch, training, rng), batch.valid);
  Tensor<T> logits = add(matmul(pooled, head_w_), head_b_);
  return {std::move(pooled), std::move(logits)};
}

template <typename T>
std::vector<T> RhythmEncoderModel<T>::embed_utterance(std::span<const std::int32_t> tokens) const {
  if (tokens.empty()) throw std::invalid_argument("embed_utterance: empty sequence");
  NoGradGuard no_grad;
  std::vector<std::vector<std::int32_t>> seqs{{tokens.begin(), tokens.end()}};
  Batch batch = make_batch(seqs, {});
  Rng unused(0);
  Output out = forward(batch, false, unused);
  return {out.pooled.values().begin(), out.pooled.values().end()};
}

template std::vector<float> positional_encoding<float>(std::size_t, std::size_t);
template std::vector<double> positional_encoding<double>(std::size_t, std::size_t);
template Tensor<float> xavier_uniform<float>(std::size_t, std::size_t, Rng&);
template Tensor<double> xavier_uniform<double>(std::size_t, std::size_t, Rng&);
template class RhythmEncoderModel<float>;
template class RhythmEncoderModel<double>;

}  // namespace rhythmid
