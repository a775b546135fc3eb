// SPDX-License-Identifier: Apache-2.0
/**
 * @file   training.hpp
 * @brief  Datasets, train/validation splitting, the cosine schedule, and the
 *         epoch loop with early stopping on validation balanced accuracy.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rhythmid/encoder.hpp"
#include "rhythmid/facs.hpp"
#include "rhythmid/fusion.hpp"
#include "rhythmid/metrics.hpp"

namespace rhythmid {

enum class TrainMode { rhythm_only, fusion, xvector_baseline };

std::string to_string(TrainMode mode);

struct TrainConfig {
  TrainMode mode = TrainMode::rhythm_only;
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  double lr0 = 1e-4;
  double eta_min = 0.0;
  double val_fraction = 0.10;
  /// Stops at this many consecutive non-improving evaluations; 0 and 1
  /// both stop at the first.
  std::size_t early_stop_patience = 15;
  std::size_t max_tokens = 1024;
  std::uint64_t seed = 0;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
  double weight_decay = 0.0;

  /// Defaults for a mode: 150 epochs for the baseline, lr 1e-3 for the
  /// fusion and baseline modes.
  static TrainConfig defaults_for(TrainMode mode);
  void validate() const;
  std::string to_json() const;
};

struct Example {
  std::string utt_id;
  std::int32_t label = 0;
  std::vector<std::int32_t> tokens;
  std::vector<double> xvector;
};

struct Dataset {
  /// Label table: speakers[label] is the speaker id.
  std::vector<std::string> speakers;
  std::vector<Example> examples;
  /// Sequences dropped for having no frames.
  std::size_t skipped_empty = 0;

  std::size_t size() const { return examples.size(); }
};

/// Truncates every sequence to max_tokens and labels it against
/// `speaker_table`, or against the sorted distinct speakers when the table
/// is empty. Throws for speakers missing from a given table.
Dataset make_dataset(std::span<const FacsSequence> corpus, std::size_t max_tokens,
                     const std::vector<std::string>& speaker_table = {});

/// Copies each example's x-vector from the table. Throws
/// std::invalid_argument listing utterances with no entry.
void attach_xvectors(Dataset& dataset, const XVectorTable& table);

struct TrainValSplit {
  Dataset train;
  Dataset val;
};

/// Random utterance-level split holding out about val_fraction (at least
/// one utterance) while leaving every speaker at least one training
/// utterance. Throws naming any speaker with fewer than two utterances.
TrainValSplit split_train_val(const Dataset& dataset, double val_fraction, std::uint64_t seed);

/// eta_min + (lr0 - eta_min) * (1 + cos(pi * step / total_steps)) / 2
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0, double eta_min);

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepRecord {
  std::size_t step = 0;  ///< 1-based optimizer step
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct EvalRecord {
  std::size_t epoch = 0;
  double balanced_accuracy = 0.0;
};

enum class StopReason { epochs_exhausted, early_stopped };

std::string to_string(StopReason reason);

struct TrainRun {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  double best_balanced_accuracy = -1.0;
  std::size_t best_epoch = 0;
  StopReason stop_reason = StopReason::epochs_exhausted;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
};

struct TrainObserver {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EvalRecord&, bool improved)> on_eval;
};

/// Snapshot of every parameter value, in parameters() order.
using ParameterSnapshot = std::vector<std::vector<float>>;
ParameterSnapshot snapshot_parameters(const SpeakerClassifier<float>& model);
void restore_parameters(SpeakerClassifier<float>& model, const ParameterSnapshot& snapshot);

/// Trains on `train_set`, evaluating balanced accuracy on `val_set` once
/// per epoch. On return `model` holds the best-scoring parameters.
TrainRun train_on_split(const TrainConfig& config, const Dataset& train_set,
                        const Dataset& val_set, SpeakerClassifier<float>& model,
                        const TrainObserver& observer = {});

/// Splits `data` with config.val_fraction and config.seed, then trains.
TrainRun train(const TrainConfig& config, const Dataset& data, SpeakerClassifier<float>& model,
               const TrainObserver& observer = {});

/// Evaluation-mode predictions (argmax, lowest index on ties).
std::vector<std::size_t> predict(const SpeakerClassifier<float>& model, const Dataset& data,
                                 std::size_t batch_size = 64);
ConfusionMatrix evaluate(const SpeakerClassifier<float>& model, const Dataset& data,
                         std::size_t batch_size = 64);

/// CSV bodies for the run directory.
std::string loss_log_csv(const TrainRun& run);
std::string val_log_csv(const TrainRun& run);

}  // namespace rhythmid
