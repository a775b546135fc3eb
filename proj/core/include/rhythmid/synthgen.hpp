// SPDX-License-Identifier: Apache-2.0
/**
 * @file   synthgen.hpp
 * @brief  Seeded synthetic speakers with character-duration signatures.
 *
 * Each speaker owns a mean duration (in frames) per character plus a pause
 * habit between words. A variability level scales every source of
 * intra-speaker randomness: per-character dispersion, per-utterance tempo,
 * and pause decisions. Variability 0 makes a speaker fully repeatable.
 */
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rhythmid/facs.hpp"
#include "rhythmid/fusion.hpp"
#include "rhythmid/rng.hpp"

namespace rhythmid {

struct SpeakerRhythmProfile {
  std::string speaker_id;
  /// Mean frames (>= 1) and dispersion (>= 0) per alphabet symbol.
  std::map<std::string, double> mean_frames;
  std::map<std::string, double> dispersion;
  double pause_probability = 0.5;
  double pause_mean_frames = 3.0;
  double pause_dispersion = 1.0;
};

struct SynthKnobs {
  /// Per-utterance tempo jitter (relative) at variability 1.
  double tempo_jitter = 0.08;
  /// Null frames before the first and after the last character.
  std::size_t edge_silence_frames = 2;
  int frame_ms = kDefaultFrameMs;
};

/// Throws std::invalid_argument for an empty alphabet, n_speakers < 2, or
/// negative separation.
std::vector<SpeakerRhythmProfile> gen_profiles(std::size_t n_speakers,
                                               const std::vector<std::string>& alphabet,
                                               double separation, Rng& rng);

/// n_utts_per_speaker utterances per profile, each over a randomly chosen
/// text. Characters outside a profile's alphabet are skipped; spaces become
/// word boundaries.
std::vector<AlignedUtterance> gen_corpus(std::span<const SpeakerRhythmProfile> profiles,
                                         std::span<const std::string> texts,
                                         std::size_t n_utts_per_speaker, double variability,
                                         Rng& rng, const SynthKnobs& knobs = {});

/// informativeness * center + (1 - informativeness) * noise, with one
/// standard-normal center per speaker and standard-normal noise.
XVectorTable gen_xvectors(std::span<const SpeakerRhythmProfile> profiles,
                          std::span<const AlignedUtterance> utterances, double informativeness,
                          std::size_t dim, Rng& rng);

const std::vector<std::string>& default_texts();
std::vector<std::string> default_alphabet();

struct CorpusSplit {
  std::vector<AlignedUtterance> train;
  std::vector<AlignedUtterance> test;
};

/// Holds out ceil(test_fraction * n) of each speaker's utterances (at least
/// one, never all) in generation order.
CorpusSplit stratified_split(std::span<const AlignedUtterance> corpus, double test_fraction);

/// Nearest-centroid speaker classifier over per-character mean durations,
/// fitted on `train` and scored on `test`; returns balanced accuracy.
double centroid_oracle_accuracy(std::span<const AlignedUtterance> train,
                                std::span<const AlignedUtterance> test,
                                const std::vector<std::string>& alphabet,
                                int frame_ms = kDefaultFrameMs);

}  // namespace rhythmid
