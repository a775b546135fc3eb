// SPDX-License-Identifier: Apache-2.0
#include "rhythmid/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <stdexcept>

#include "rhythmid/metrics.hpp"

namespace rhythmid {

const std::vector<std::string>& default_texts() {
  static const std::vector<std::string> texts = {
      "he spoke the last two words",
      "she stepped boldly into the room",
      "the quick brown fox jumps",
      "pack my box with five jugs",
      "a wizard quickly jinxed the gnomes",
      "vexed nymphs go for quick waltz",
      "the five boxing wizards jump",
      "bright vixens jump dozy fowl quack",
      "how vexingly quick daft zebras jump",
      "jackdaws love my big sphinx",
      "we promptly judged antique ivory",
      "sphinx of black quartz judge my vow",
      "glib jocks quiz nymph to vex dwarf",
      "the job requires extra pluck",
      "my girl wove six dozen plaid jackets",
      "crazy fredrick bought many jewels",
  };
  return texts;
}

std::vector<std::string> default_alphabet() {
  std::vector<std::string> out;
  for (char c = 'a'; c <= 'z'; ++c) out.emplace_back(1, c);
  return out;
}

std::vector<SpeakerRhythmProfile> gen_profiles(std::size_t n_speakers,
                                               const std::vector<std::string>& alphabet,
                                               double separation, Rng& rng) {
  if (alphabet.empty()) throw std::invalid_argument("gen_profiles: empty alphabet");
  if (n_speakers < 2) throw std::invalid_argument("gen_profiles: need at least 2 speakers");
  if (!(separation >= 0.0)) throw std::invalid_argument("gen_profiles: separation must be >= 0");

  // Shared "language" durations, then per-speaker offsets scaled by
  // separation. Draw counts do not depend on separation.
  std::map<std::string, double> base_mean;
  std::map<std::string, double> base_disp;
  for (const auto& s : alphabet) {
    base_mean[s] = rng.uniform(2.0, 4.5);
    base_disp[s] = rng.uniform(0.4, 0.8);
  }
  std::vector<SpeakerRhythmProfile> profiles(n_speakers);
  const int width = n_speakers > 99 ? 4 : 2;
  for (std::size_t i = 0; i < n_speakers; ++i) {
    auto& p = profiles[i];
    char id[32];
    std::snprintf(id, sizeof id, "spk%0*zu", width, i);
    p.speaker_id = id;
    const double tempo = rng.normal();
    for (const auto& s : alphabet) {
      const double offset = separation * (0.5 * tempo + rng.normal());
      p.mean_frames[s] = std::max(1.0, base_mean[s] + offset);
      p.dispersion[s] = base_disp[s];
    }
    p.pause_probability = std::clamp(0.5 + 0.3 * separation * rng.normal(), 0.05, 0.95);
    p.pause_mean_frames = std::max(1.0, 3.0 + 1.5 * separation * rng.normal());
    p.pause_dispersion = 1.0;
  }
  return profiles;
}

namespace {

std::size_t draw_frames(Rng& rng, double mean, double stddev, std::size_t floor_frames) {
  const double d = std::round(rng.normal(mean, stddev));
  return d < static_cast<double>(floor_frames) ? floor_frames : static_cast<std::size_t>(d);
}

}  // namespace

std::vector<AlignedUtterance> gen_corpus(std::span<const SpeakerRhythmProfile> profiles,
                                         std::span<const std::string> texts,
                                         std::size_t n_utts_per_speaker, double variability,
                                         Rng& rng, const SynthKnobs& knobs) {
  if (texts.empty()) throw std::invalid_argument("gen_corpus: no texts");
  if (n_utts_per_speaker == 0) throw std::invalid_argument("gen_corpus: n_utts_per_speaker is 0");
  if (!(variability >= 0.0)) throw std::invalid_argument("gen_corpus: variability must be >= 0");
  auto seconds = [&](std::size_t frame) {
    return static_cast<double>(frame * static_cast<std::size_t>(knobs.frame_ms)) / 1000.0;
  };

  std::vector<AlignedUtterance> corpus;
  corpus.reserve(profiles.size() * n_utts_per_speaker);
  for (const auto& profile : profiles) {
    // Pause randomness interpolates from the profile's hard decision at
    // variability 0 to its actual probability at variability >= 1.
    const double hard = profile.pause_probability >= 0.5 ? 1.0 : 0.0;
    const double pause_p = hard + std::min(1.0, variability) * (profile.pause_probability - hard);
    for (std::size_t u = 0; u < n_utts_per_speaker; ++u) {
      const auto& text = texts[rng.below(texts.size())];
      const double tempo =
          std::max(0.5, rng.normal(1.0, knobs.tempo_jitter * variability));
      AlignedUtterance utt;
      char id[64];
      std::snprintf(id, sizeof id, "%s-%04zu", profile.speaker_id.c_str(), u);
      utt.utt_id = id;
      utt.speaker_id = profile.speaker_id;

      std::size_t frame = knobs.edge_silence_frames;
      bool pending_boundary = false;
      for (char raw : text) {
        if (raw == ' ') {
          pending_boundary = !utt.segments.empty();
          continue;
        }
        const std::string symbol = normalize_symbol(std::string(1, raw));
        auto mean_it = profile.mean_frames.find(symbol);
        if (mean_it == profile.mean_frames.end()) continue;
        if (pending_boundary) {
          if (rng.bernoulli(pause_p)) {
            frame += draw_frames(rng, profile.pause_mean_frames,
                                 profile.pause_dispersion * variability, 1);
          }
          pending_boundary = false;
        }
        const std::size_t frames =
            draw_frames(rng, mean_it->second * tempo,
                        profile.dispersion.at(symbol) * variability, 1);
        utt.segments.push_back({symbol, seconds(frame), seconds(frame + frames)});
        frame += frames;
      }
      frame += knobs.edge_silence_frames;
      utt.duration_s = seconds(frame);
      corpus.push_back(std::move(utt));
    }
  }
  return corpus;
}

XVectorTable gen_xvectors(std::span<const SpeakerRhythmProfile> profiles,
                          std::span<const AlignedUtterance> utterances, double informativeness,
                          std::size_t dim, Rng& rng) {
  if (dim < 2) throw std::invalid_argument("gen_xvectors: dim must be at least 2");
  if (!(informativeness >= 0.0 && informativeness <= 1.0)) {
    throw std::invalid_argument("gen_xvectors: informativeness must lie in [0, 1]");
  }
  std::map<std::string, std::vector<double>> centers;
  for (const auto& p : profiles) {
    std::vector<double> c(dim);
    for (auto& v : c) v = rng.normal();
    centers.emplace(p.speaker_id, std::move(c));
  }
  XVectorTable table;
  table.dim = dim;
  for (const auto& utt : utterances) {
    auto it = centers.find(utt.speaker_id);
    if (it == centers.end()) {
      throw std::invalid_argument("gen_xvectors: utterance '" + utt.utt_id +
                                  "' has no speaker profile");
    }
    std::vector<double> v(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      v[i] = informativeness * it->second[i] + (1.0 - informativeness) * rng.normal();
    }
    table.entries.emplace(utt.utt_id, std::move(v));
  }
  return table;
}

CorpusSplit stratified_split(std::span<const AlignedUtterance> corpus, double test_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("test_fraction must lie strictly between 0 and 1");
  }
  std::map<std::string, std::size_t> totals;
  for (const auto& u : corpus) ++totals[u.speaker_id];
  std::map<std::string, std::size_t> taken;
  CorpusSplit split;
  for (const auto& u : corpus) {
    const std::size_t n = totals[u.speaker_id];
    std::size_t quota = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(n)));
    quota = std::min(std::max<std::size_t>(quota, 1), n > 1 ? n - 1 : 0);
    auto& t = taken[u.speaker_id];
    if (t < quota) {
      ++t;
      split.test.push_back(u);
    } else {
      split.train.push_back(u);
    }
  }
  return split;
}

namespace {

std::vector<double> duration_features(const AlignedUtterance& utt,
                                      const std::vector<std::string>& alphabet, int frame_ms) {
  std::vector<double> total(alphabet.size(), 0.0);
  std::vector<double> count(alphabet.size(), 0.0);
  for (const auto& seg : utt.segments) {
    auto it = std::lower_bound(alphabet.begin(), alphabet.end(), seg.symbol);
    if (it == alphabet.end() || *it != seg.symbol) continue;
    const auto k = static_cast<std::size_t>(it - alphabet.begin());
    total[k] += (seg.end_s - seg.start_s) * 1000.0 / frame_ms;
    count[k] += 1.0;
  }
  for (std::size_t k = 0; k < total.size(); ++k) {
    total[k] = count[k] > 0 ? total[k] / count[k] : std::numeric_limits<double>::quiet_NaN();
  }
  return total;
}

}  // namespace

double centroid_oracle_accuracy(std::span<const AlignedUtterance> train,
                                std::span<const AlignedUtterance> test,
                                const std::vector<std::string>& alphabet_in, int frame_ms) {
  std::vector<std::string> alphabet = alphabet_in;
  std::sort(alphabet.begin(), alphabet.end());
  std::set<std::string> speaker_set;
  for (const auto& u : train) speaker_set.insert(u.speaker_id);
  std::vector<std::string> speakers(speaker_set.begin(), speaker_set.end());
  const std::size_t k = alphabet.size();

  std::vector<std::vector<double>> sums(speakers.size(), std::vector<double>(k, 0.0));
  std::vector<std::vector<double>> counts(speakers.size(), std::vector<double>(k, 0.0));
  std::vector<double> global_sum(k, 0.0);
  std::vector<double> global_count(k, 0.0);
  for (const auto& u : train) {
    const auto s = static_cast<std::size_t>(
        std::lower_bound(speakers.begin(), speakers.end(), u.speaker_id) - speakers.begin());
    auto f = duration_features(u, alphabet, frame_ms);
    for (std::size_t j = 0; j < k; ++j) {
      if (std::isnan(f[j])) continue;
      sums[s][j] += f[j];
      counts[s][j] += 1.0;
      global_sum[j] += f[j];
      global_count[j] += 1.0;
    }
  }
  std::vector<double> global_mean(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    global_mean[j] = global_count[j] > 0 ? global_sum[j] / global_count[j] : 0.0;
  }
  std::vector<std::vector<double>> centroids(speakers.size(), std::vector<double>(k));
  for (std::size_t s = 0; s < speakers.size(); ++s) {
    for (std::size_t j = 0; j < k; ++j) {
      centroids[s][j] = counts[s][j] > 0 ? sums[s][j] / counts[s][j] : global_mean[j];
    }
  }

  ConfusionMatrix cm(speakers.size());
  for (const auto& u : test) {
    auto it = std::lower_bound(speakers.begin(), speakers.end(), u.speaker_id);
    if (it == speakers.end() || *it != u.speaker_id) continue;
    auto f = duration_features(u, alphabet, frame_ms);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < speakers.size(); ++s) {
      double d = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        if (std::isnan(f[j])) continue;  // character absent from this utterance
        d += (f[j] - centroids[s][j]) * (f[j] - centroids[s][j]);
      }
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    cm.add(static_cast<std::size_t>(it - speakers.begin()), best);
  }
  return balanced_accuracy(cm).value;
}

}  // namespace rhythmid
