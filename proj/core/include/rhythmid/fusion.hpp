// SPDX-License-Identifier: Apache-2.0
/**
 * @file   fusion.hpp
 * @brief  Precomputed x-vector tables, rhythm + x-vector fusion, and the
 *         x-vector-only linear baseline.
 */
#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "rhythmid/encoder.hpp"

namespace rhythmid {

struct XVectorTable {
  std::size_t dim = 0;
  /// Ordered by utt_id so writes are deterministic.
  std::map<std::string, std::vector<double>> entries;

  const std::vector<double>* find(const std::string& utt_id) const;
};

/// TSV: first line `dim<TAB>D`, then `utt_id<TAB>v1<TAB>...<TAB>vD`.
/// Throws std::invalid_argument naming the line for dimension mismatches,
/// duplicate ids, and non-numeric or non-finite fields.
XVectorTable load_xvectors(std::istream& in);
XVectorTable load_xvectors(const std::filesystem::path& path);
void write_xvectors(std::ostream& out, const XVectorTable& table);

enum class FusionOp { concat, sum };

struct FusionConfig {
  std::size_t xvector_dim = 0;
  std::size_t projection_dim = 128;
  FusionOp op = FusionOp::concat;
};

/// Constant [rows, dim] tensor from the batch's x-vector buffer.
template <typename T>
Tensor<T> xvector_tensor(const Batch& batch);

/// head(fuse(proj_x(xvec), proj_r(pooled rhythm embedding))). The rhythm
/// encoder stays trainable; its own speaker head is not used.
template <typename T>
class FusionAssembly final : public SpeakerClassifier<T> {
 public:
  FusionAssembly(RhythmEncoderModel<T> rhythm, FusionConfig config, std::size_t n_speakers,
                 Rng& rng);
  /// Reassembles from stored tensors, in parameters() order.
  FusionAssembly(RhythmEncoderModel<T> rhythm, FusionConfig config, std::size_t n_speakers,
                 Tensor<T> proj_x_w, Tensor<T> proj_x_b, Tensor<T> proj_r_w, Tensor<T> proj_r_b,
                 Tensor<T> head_w, Tensor<T> head_b);

  Tensor<T> logits(const Batch& batch, bool training, Rng& rng) const override;
  std::vector<NamedParameter<T>> parameters() const override;
  std::size_t num_speakers() const override { return n_speakers_; }

  const FusionConfig& config() const { return config_; }
  const RhythmEncoderModel<T>& rhythm() const { return rhythm_; }
  const Tensor<T>& xvector_projection() const { return proj_x_w_; }
  const Tensor<T>& rhythm_projection() const { return proj_r_w_; }
  std::size_t head_input_dim() const;

 private:
  RhythmEncoderModel<T> rhythm_;
  FusionConfig config_;
  std::size_t n_speakers_;
  Tensor<T> proj_x_w_, proj_x_b_, proj_r_w_, proj_r_b_, head_w_, head_b_;
};

template <typename T>
Tensor<T> fused_forward(const FusionAssembly<T>& assembly, const Batch& batch, bool training,
                        Rng& rng) {
  return assembly.logits(batch, training, rng);
}

/// Single affine map from x-vectors to speaker logits.
template <typename T>
class XVectorBaseline final : public SpeakerClassifier<T> {
 public:
  XVectorBaseline(std::size_t xvector_dim, std::size_t n_speakers, Rng& rng);
  XVectorBaseline(Tensor<T> weight, Tensor<T> bias);

  Tensor<T> logits(const Batch& batch, bool training, Rng& rng) const override;
  std::vector<NamedParameter<T>> parameters() const override;
  std::size_t num_speakers() const override { return weight_.dim(1); }
  std::size_t xvector_dim() const { return weight_.dim(0); }

 private:
  Tensor<T> weight_, bias_;
};

template <typename T>
Tensor<T> xvector_baseline_forward(const XVectorBaseline<T>& head, const Batch& batch) {
  Rng unused(0);
  return head.logits(batch, false, unused);
}

extern template class FusionAssembly<float>;
extern template class FusionAssembly<double>;
extern template class XVectorBaseline<float>;
extern template class XVectorBaseline<double>;

}  // namespace rhythmid
