// SPDX-License-Identifier: Apache-2.0
/**
 * @file   encoder.hpp
 * @brief  Rhythm encoder: token embedding, sinusoidal positions, post-norm
 *         transformer layers with windowed self-attention, masked mean
 *         pooling and a linear speaker head.
 */
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rhythmid/attention.hpp"
#include "rhythmid/rng.hpp"
#include "rhythmid/tensor.hpp"

namespace rhythmid {

enum class Activation { gelu, relu };
enum class AttentionImpl { banded, dense };

struct RhythmEncoderConfig {
  std::size_t d_model = 128;
  std::size_t n_heads = 8;
  std::size_t n_layers = 6;
  std::size_t ffn_dim = 512;
  std::size_t attn_window_radius = 2;
  double dropout_rate = 0.1;
  std::size_t max_len = 1024;
  std::size_t vocab_size = 0;
  std::size_t n_speakers = 0;
  Activation activation = Activation::gelu;
  AttentionImpl attention = AttentionImpl::banded;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }
};

/// A padded batch of token sequences. Row r occupies
/// tokens[r*len, (r+1)*len); valid marks the real (non-PAD) positions.
struct Batch {
  std::size_t rows = 0;
  std::size_t len = 0;
  std::vector<std::int32_t> tokens;
  std::vector<std::uint8_t> valid;
  std::vector<std::int32_t> labels;
  /// Row-major [rows, xvector_dim]; empty outside the x-vector modes.
  std::vector<double> xvectors;
  std::size_t xvector_dim = 0;

  /// Checks the structural invariants (sizes, >=1 valid token per row).
  void validate() const;
};

/// Pads `sequences` with `pad_id` to the longest one. Throws for empty
/// sequences or a label count that differs from the sequence count;
/// `labels` may be empty for unlabeled batches.
Batch make_batch(std::span<const std::vector<std::int32_t>> sequences,
                 std::span<const std::int32_t> labels, std::int32_t pad_id = 0);

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

/// Anything trainable that maps a batch to speaker logits.
template <typename T>
class SpeakerClassifier {
 public:
  virtual ~SpeakerClassifier() = default;
  virtual Tensor<T> logits(const Batch& batch, bool training, Rng& rng) const = 0;
  /// Parameters in their serialization order.
  virtual std::vector<NamedParameter<T>> parameters() const = 0;
  virtual std::size_t num_speakers() const = 0;
};

/// PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos(same angle).
template <typename T>
std::vector<T> positional_encoding(std::size_t max_len, std::size_t d_model);

template <typename T>
struct EncoderLayerParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> ln2_gain, ln2_bias;
};

/// Copies share parameter storage; use clone() for an independent model.
template <typename T>
class RhythmEncoderModel final : public SpeakerClassifier<T> {
 public:
  struct Output {
    Tensor<T> pooled;  ///< [B, d_model]
    Tensor<T> logits;  ///< [B, n_speakers]
  };

  RhythmEncoderModel() = default;
  /// Xavier-uniform projections, N(0, 1/d_model) embeddings, zero biases,
  /// unit layer-norm gains.
  RhythmEncoderModel(const RhythmEncoderConfig& config, Rng& rng);

  const RhythmEncoderConfig& config() const { return config_; }

  Output forward(const Batch& batch, bool training, Rng& rng) const;
  /// Final-layer representation before pooling, [B, L, d_model].
  Tensor<T> encode(const Batch& batch, bool training, Rng& rng) const;
  /// Pooled evaluation-mode embedding of one token sequence.
  std::vector<T> embed_utterance(std::span<const std::int32_t> tokens) const;

  Tensor<T> logits(const Batch& batch, bool training, Rng& rng) const override {
    return forward(batch, training, rng).logits;
  }
  std::vector<NamedParameter<T>> parameters() const override;
  std::size_t num_speakers() const override { return config_.n_speakers; }

  RhythmEncoderModel clone() const;

  const Tensor<T>& embedding() const { return embedding_; }
  const std::vector<EncoderLayerParams<T>>& layers() const { return layers_; }
  const Tensor<T>& head_weight() const { return head_w_; }
  const Tensor<T>& head_bias() const { return head_b_; }

 private:
  RhythmEncoderConfig config_;
  Tensor<T> embedding_;
  std::vector<EncoderLayerParams<T>> layers_;
  Tensor<T> head_w_;
  Tensor<T> head_b_;
  std::vector<T> positions_;
};

template <typename T>
RhythmEncoderModel<T> init_model(const RhythmEncoderConfig& config, Rng& rng) {
  return RhythmEncoderModel<T>(config, rng);
}

/// Xavier-uniform [fan_in, fan_out] weight leaf.
template <typename T>
Tensor<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

extern template class RhythmEncoderModel<float>;
extern template class RhythmEncoderModel<double>;

}  // namespace rhythmid
