// SPDX-License-Identifier: Apache-2.0
/**
 * @file   checkpoint.hpp
 * @brief  Binary model checkpoints.
 *
 * Layout:
 *   8 bytes   magic "RHYCKPT\0"
 *   4 bytes   format version, little-endian uint32 (currently 1)
 *   8 bytes   header length N, little-endian uint64
 *   N bytes   UTF-8 JSON header: kind, configs, vocabulary fingerprint,
 *             speaker-label table, and the ordered parameter list with shapes
 *   payload   every parameter's values as little-endian float32, in header
 *             order, each tensor row-major
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rhythmid/encoder.hpp"
#include "rhythmid/fusion.hpp"

namespace rhythmid {

inline constexpr char kCheckpointMagic[8] = {'R', 'H', 'Y', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ModelKind { rhythm_only, fusion, xvector_baseline };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Labels and provenance stored alongside the weights.
struct CheckpointMeta {
  std::uint64_t vocab_fingerprint = 0;
  std::vector<std::string> speakers;
};

struct LoadedCheckpoint {
  ModelKind kind = ModelKind::rhythm_only;
  CheckpointMeta meta;
  std::optional<RhythmEncoderConfig> encoder;
  std::optional<FusionConfig> fusion;
  std::unique_ptr<SpeakerClassifier<float>> model;

  /// Non-null for rhythm_only checkpoints.
  const RhythmEncoderModel<float>* rhythm() const;
};

void save_checkpoint(std::ostream& out, const RhythmEncoderModel<float>& model,
                     const CheckpointMeta& meta);
void save_checkpoint(std::ostream& out, const FusionAssembly<float>& model,
                     const CheckpointMeta& meta);
void save_checkpoint(std::ostream& out, const XVectorBaseline<float>& model,
                     const CheckpointMeta& meta);
/// Dispatches on the dynamic type of `model`.
void save_checkpoint(std::ostream& out, const SpeakerClassifier<float>& model,
                     const CheckpointMeta& meta);
void save_checkpoint(const std::filesystem::path& path, const SpeakerClassifier<float>& model,
                     const CheckpointMeta& meta);

/// Throws std::runtime_error for bad magic, unsupported versions,
/// truncated payloads, or parameter lists that disagree with the config.
LoadedCheckpoint load_checkpoint(std::istream& in);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

std::string encoder_config_to_json(const RhythmEncoderConfig& config);
RhythmEncoderConfig encoder_config_from_json(const std::string& text);

}  // namespace rhythmid
