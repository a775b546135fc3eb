// SPDX-License-Identifier: Apache-2.0
#include "rhythmid/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

#include <json.hpp>

#include "rhythmid/ops.hpp"
#include "rhythmid/optim.hpp"

namespace rhythmid {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::rhythm_only:
      return "rhythm_only";
    case TrainMode::fusion:
      return "fusion";
    case TrainMode::xvector_baseline:
      return "xvector_baseline";
  }
  return "unknown";
}

std::string to_string(StopReason reason) {
  return reason == StopReason::early_stopped ? "early_stopped" : "epochs_exhausted";
}

TrainConfig TrainConfig::defaults_for(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  if (mode != TrainMode::rhythm_only) c.lr0 = 1e-3;
  if (mode == TrainMode::xvector_baseline) c.epochs = 150;
  return c;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("epochs must be at least 1");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("val_fraction must lie strictly between 0 and 1");
  }
  if (max_tokens == 0) throw std::invalid_argument("max_tokens must be positive");
  if (!(lr0 >= 0.0) || !(eta_min >= 0.0)) {
    throw std::invalid_argument("learning rates must be non-negative");
  }
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j = {{"mode", to_string(mode)},
                              {"epochs", epochs},
                              {"batch_size", batch_size},
                              {"lr0", lr0},
                              {"eta_min", eta_min},
                              {"val_fraction", val_fraction},
                              {"early_stop_patience", early_stop_patience},
                              {"max_tokens", max_tokens},
                              {"seed", seed},
                              {"clip_norm", clip_norm},
                              {"weight_decay", weight_decay}};
  return j.dump();
}

Dataset make_dataset(std::span<const FacsSequence> corpus, std::size_t max_tokens,
                     const std::vector<std::string>& speaker_table) {
  Dataset ds;
  if (speaker_table.empty()) {
    std::set<std::string> distinct;
    for (const auto& seq : corpus) distinct.insert(seq.speaker_id);
    ds.speakers.assign(distinct.begin(), distinct.end());
  } else {
    ds.speakers = speaker_table;
  }
  std::map<std::string, std::int32_t> label_of;
  for (std::size_t i = 0; i < ds.speakers.size(); ++i) {
    label_of.emplace(ds.speakers[i], static_cast<std::int32_t>(i));
  }
  for (const auto& seq : corpus) {
    auto it = label_of.find(seq.speaker_id);
    if (it == label_of.end()) {
      throw std::invalid_argument("speaker '" + seq.speaker_id + "' of utterance '" + seq.utt_id +
                                  "' is not in the speaker table");
    }
    if (seq.token_ids.empty()) {
      ++ds.skipped_empty;
      continue;
    }
    FacsSequence cut = truncate(seq, max_tokens);
    ds.examples.push_back({seq.utt_id, it->second, std::move(cut.token_ids), {}});
  }
  return ds;
}

void attach_xvectors(Dataset& dataset, const XVectorTable& table) {
  std::vector<std::string> missing;
  for (auto& ex : dataset.examples) {
    if (const auto* v = table.find(ex.utt_id)) {
      ex.xvector = *v;
    } else {
      missing.push_back(ex.utt_id);
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 10) list += ", ...";
    throw std::invalid_argument(std::to_string(missing.size()) +
                                " utterance(s) have no x-vector: " + list);
  }
}

TrainValSplit split_train_val(const Dataset& dataset, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("val_fraction must lie strictly between 0 and 1");
  }
  std::vector<std::size_t> per_speaker(dataset.speakers.size(), 0);
  for (const auto& ex : dataset.examples) ++per_speaker[static_cast<std::size_t>(ex.label)];
  for (std::size_t s = 0; s < per_speaker.size(); ++s) {
    if (per_speaker[s] == 1) {
      throw std::invalid_argument("speaker '" + dataset.speakers[s] +
                                  "' has fewer than 2 utterances; cannot hold one out");
    }
  }
  std::size_t present = 0;
  for (auto n : per_speaker) present += n > 0 ? 1 : 0;
  const std::size_t n = dataset.size();
  const std::size_t capacity = n - present;
  std::size_t target = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  target = std::min(std::max<std::size_t>(target, 1), capacity);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order.begin(), order.end());

  std::vector<std::uint8_t> to_val(n, 0);
  std::vector<std::size_t> remaining = per_speaker;
  std::size_t chosen = 0;
  for (std::size_t idx : order) {
    if (chosen == target) break;
    auto& left = remaining[static_cast<std::size_t>(dataset.examples[idx].label)];
    if (left < 2) continue;
    --left;
    to_val[idx] = 1;
    ++chosen;
  }

  TrainValSplit split;
  split.train.speakers = dataset.speakers;
  split.val.speakers = dataset.speakers;
  for (std::size_t i = 0; i < n; ++i) {
    (to_val[i] ? split.val : split.train).examples.push_back(dataset.examples[i]);
  }
  return split;
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0, double eta_min) {
  if (total_steps == 0) throw std::invalid_argument("cosine_lr: total_steps must be at least 1");
  if (step > total_steps) step = total_steps;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  std::vector<std::vector<std::int32_t>> seqs;
  std::vector<std::int32_t> labels;
  seqs.reserve(indices.size());
  for (auto i : indices) {
    seqs.push_back(dataset.examples.at(i).tokens);
    labels.push_back(dataset.examples[i].label);
  }
  Batch batch = make_batch(seqs, labels, kPadId);
  const std::size_t dim = dataset.examples[indices[0]].xvector.size();
  if (dim > 0) {
    batch.xvector_dim = dim;
    batch.xvectors.reserve(indices.size() * dim);
    for (auto i : indices) {
      const auto& v = dataset.examples[i].xvector;
      if (v.size() != dim) throw ShapeError("x-vectors of differing dimension in one batch");
      batch.xvectors.insert(batch.xvectors.end(), v.begin(), v.end());
    }
  }
  return batch;
}

ParameterSnapshot snapshot_parameters(const SpeakerClassifier<float>& model) {
  ParameterSnapshot snap;
  for (const auto& p : model.parameters()) {
    snap.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  }
  return snap;
}

void restore_parameters(SpeakerClassifier<float>& model, const ParameterSnapshot& snapshot) {
  auto params = model.parameters();
  if (params.size() != snapshot.size()) {
    throw std::invalid_argument("snapshot does not match the model's parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].tensor.mutable_values();
    if (values.size() != snapshot[i].size()) {
      throw std::invalid_argument("snapshot size mismatch for " + params[i].name);
    }
    std::copy(snapshot[i].begin(), snapshot[i].end(), values.begin());
  }
}

std::vector<std::size_t> predict(const SpeakerClassifier<float>& model, const Dataset& data,
                                 std::size_t batch_size) {
  NoGradGuard no_grad;
  Rng unused(0);
  std::vector<std::size_t> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    Tensor<float> logits = model.logits(make_batch(data, idx), false, unused);
    const std::size_t classes = logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out.push_back(argmax(logits.values().subspan(r * classes, classes)));
    }
  }
  return out;
}

ConfusionMatrix evaluate(const SpeakerClassifier<float>& model, const Dataset& data,
                         std::size_t batch_size) {
  ConfusionMatrix cm(model.num_speakers());
  auto predictions = predict(model, data, batch_size);
  for (std::size_t i = 0; i < data.size(); ++i) {
    cm.add(static_cast<std::size_t>(data.examples[i].label), predictions[i]);
  }
  return cm;
}

TrainRun train_on_split(const TrainConfig& config, const Dataset& train_set,
                        const Dataset& val_set, SpeakerClassifier<float>& model,
                        const TrainObserver& observer) {
  config.validate();
  if (train_set.size() == 0 || val_set.size() == 0) {
    throw std::invalid_argument("training needs non-empty train and validation sets");
  }
  if (train_set.speakers != val_set.speakers) {
    throw std::invalid_argument("train and validation speaker tables differ");
  }
  if (model.num_speakers() != train_set.speakers.size()) {
    throw std::invalid_argument("model predicts " + std::to_string(model.num_speakers()) +
                                " speakers, data has " + std::to_string(train_set.speakers.size()));
  }

  TrainRun run;
  run.train_size = train_set.size();
  run.val_size = val_set.size();
  const std::size_t batches_per_epoch =
      (train_set.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = config.epochs * batches_per_epoch;

  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  Rng dropout_rng(derive_seed(config.seed, "dropout"));
  AdamHyper hyper;
  hyper.weight_decay = config.weight_decay;
  Adam<float> optimizer(model.parameters(), hyper, config.clip_norm);

  ParameterSnapshot best = snapshot_parameters(model);
  std::size_t bad_epochs = 0;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t first = b * config.batch_size;
      const std::size_t last = std::min(order.size(), first + config.batch_size);
      std::span<const std::size_t> idx(order.data() + first, last - first);
      const double lr = cosine_lr(step, total_steps, config.lr0, config.eta_min);
      double loss_value = 0.0;
      try {
        optimizer.zero_grad();
        Batch batch = make_batch(train_set, idx);
        Tensor<float> loss = cross_entropy(model.logits(batch, true, dropout_rng), batch.labels);
        loss_value = loss.item();
        backward(loss);
        optimizer.step(lr);
      } catch (const NumericError& e) {
        throw TrainingError("non-finite value at step " + std::to_string(step + 1) + " (epoch " +
                            std::to_string(epoch) + ", batch " + std::to_string(b) +
                            "): " + e.what());
      }
      ++step;
      StepRecord rec{step, epoch, lr, loss_value};
      run.steps.push_back(rec);
      if (observer.on_step) observer.on_step(rec);
    }

    const double ba = balanced_accuracy(evaluate(model, val_set)).value;
    const bool improved = ba > run.best_balanced_accuracy;
    run.evals.push_back({epoch, ba});
    if (observer.on_eval) observer.on_eval(run.evals.back(), improved);
    if (improved) {
      run.best_balanced_accuracy = ba;
      run.best_epoch = epoch;
      best = snapshot_parameters(model);
      bad_epochs = 0;
    } else if (++bad_epochs >= config.early_stop_patience) {
      run.stop_reason = StopReason::early_stopped;
      break;
    }
  }
  restore_parameters(model, best);
  return run;
}

TrainRun train(const TrainConfig& config, const Dataset& data, SpeakerClassifier<float>& model,
               const TrainObserver& observer) {
  config.validate();
  auto split = split_train_val(data, config.val_fraction, config.seed);
  return train_on_split(config, split.train, split.val, model, observer);
}

std::string loss_log_csv(const TrainRun& run) {
  std::string out = "step,epoch,lr,loss\n";
  char buf[128];
  for (const auto& s : run.steps) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g\n", s.step, s.epoch, s.lr, s.loss);
    out += buf;
  }
  return out;
}

std::string val_log_csv(const TrainRun& run) {
  std::string out = "epoch,balanced_accuracy\n";
  char buf[64];
  for (const auto& e : run.evals) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", e.epoch, e.balanced_accuracy);
    out += buf;
  }
  return out;
}

}  // namespace rhythmid
