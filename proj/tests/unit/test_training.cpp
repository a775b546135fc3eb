// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "rhythmid/ops.hpp"
#include "rhythmid/training.hpp"

using namespace rhythmid;

namespace {

// Logits are a learned bias only; records which examples each training
// batch contained (the first token carries the example index).
class BiasModel final : public SpeakerClassifier<float> {
 public:
  explicit BiasModel(std::size_t classes)
      : bias_(Shape{classes}, std::vector<float>(classes, 0.0f), true) {}

  Tensor<float> logits(const Batch& batch, bool training, Rng&) const override {
    if (training) {
      std::vector<int> ids;
      for (std::size_t r = 0; r < batch.rows; ++r) ids.push_back(batch.tokens[r * batch.len]);
      seen.push_back(ids);
    }
    return add(Tensor<float>::zeros({batch.rows, bias_.numel()}), bias_);
  }
  std::vector<NamedParameter<float>> parameters() const override { return {{"bias", bias_}}; }
  std::size_t num_speakers() const override { return bias_.numel(); }

  mutable std::vector<std::vector<int>> seen;

 private:
  Tensor<float> bias_;
};

Dataset toy_dataset(std::size_t speakers, std::size_t per_speaker) {
  Dataset d;
  for (std::size_t s = 0; s < speakers; ++s) d.speakers.push_back("spk" + std::to_string(s));
  for (std::size_t s = 0; s < speakers; ++s) {
    for (std::size_t u = 0; u < per_speaker; ++u) {
      Example ex;
      ex.utt_id = d.speakers[s] + "-" + std::to_string(u);
      ex.label = static_cast<std::int32_t>(s);
      ex.tokens = {static_cast<std::int32_t>(d.examples.size()), 3, 4};
      d.examples.push_back(ex);
    }
  }
  return d;
}

RhythmEncoderConfig tiny_encoder(std::size_t vocab, std::size_t speakers) {
  RhythmEncoderConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.ffn_dim = 32;
  c.max_len = 32;
  c.vocab_size = vocab;
  c.n_speakers = speakers;
  return c;
}

// Speaker s emits runs of symbol 3 + s; trivially separable.
Dataset separable_dataset(std::size_t speakers, std::size_t per_speaker, Rng& rng) {
  Dataset d;
  for (std::size_t s = 0; s < speakers; ++s) d.speakers.push_back("spk" + std::to_string(s));
  for (std::size_t s = 0; s < speakers; ++s) {
    for (std::size_t u = 0; u < per_speaker; ++u) {
      Example ex;
      ex.label = static_cast<std::int32_t>(s);
      ex.utt_id = d.speakers[s] + "-" + std::to_string(u);
      const std::size_t len = 6 + rng.below(6);
      for (std::size_t i = 0; i < len; ++i) {
        ex.tokens.push_back(rng.uniform() < 0.7 ? static_cast<std::int32_t>(3 + s) : kNullId);
      }
      d.examples.push_back(ex);
    }
  }
  return d;
}

}  // namespace

TEST(CosineLr, Endpoints) {
  EXPECT_NEAR(cosine_lr(0, 100, 1e-3, 1e-5), 1e-3, 1e-12);
  EXPECT_NEAR(cosine_lr(100, 100, 1e-3, 1e-5), 1e-5, 1e-12);
  EXPECT_NEAR(cosine_lr(50, 100, 1e-3, 1e-5), 0.5 * (1e-3 + 1e-5), 1e-12);
  EXPECT_NEAR(cosine_lr(25, 100, 1.0, 0.0), 0.5 * (1.0 + std::cos(std::numbers::pi / 4)), 1e-12);
  EXPECT_THROW(cosine_lr(0, 0, 1.0, 0.0), std::invalid_argument);
}

TEST(CosineLr, NonIncreasing) {
  double prev = 1e9;
  for (std::size_t s = 0; s <= 977; ++s) {
    const double lr = cosine_lr(s, 977, 3e-4, 1e-6);
    ASSERT_LE(lr, prev);
    prev = lr;
  }
}

TEST(TrainConfig, ModeDefaults) {
  auto r = TrainConfig::defaults_for(TrainMode::rhythm_only);
  EXPECT_EQ(r.epochs, 300u);
  EXPECT_DOUBLE_EQ(r.lr0, 1e-4);
  EXPECT_EQ(r.batch_size, 32u);
  auto f = TrainConfig::defaults_for(TrainMode::fusion);
  EXPECT_DOUBLE_EQ(f.lr0, 1e-3);
  auto b = TrainConfig::defaults_for(TrainMode::xvector_baseline);
  EXPECT_EQ(b.epochs, 150u);
  EXPECT_DOUBLE_EQ(b.lr0, 1e-3);
}

TEST(Split, Sound) {
  auto d = toy_dataset(5, 7);
  auto s = split_train_val(d, 0.2, 3);
  EXPECT_EQ(s.train.size() + s.val.size(), d.size());
  EXPECT_EQ(s.val.size(), 7u);
  std::set<std::string> train_ids, val_ids;
  std::set<std::int32_t> train_labels;
  for (const auto& e : s.train.examples) {
    train_ids.insert(e.utt_id);
    train_labels.insert(e.label);
  }
  for (const auto& e : s.val.examples) val_ids.insert(e.utt_id);
  for (const auto& id : val_ids) EXPECT_FALSE(train_ids.count(id));
  EXPECT_EQ(train_labels.size(), 5u);
  auto again = split_train_val(d, 0.2, 3);
  for (std::size_t i = 0; i < s.val.size(); ++i) {
    EXPECT_EQ(s.val.examples[i].utt_id, again.val.examples[i].utt_id);
  }
}

TEST(Split, KeepsEverySpeakerInTrainEvenWhenGreedy) {
  auto d = toy_dataset(4, 2);
  auto s = split_train_val(d, 0.9, 1);
  std::set<std::int32_t> labels;
  for (const auto& e : s.train.examples) labels.insert(e.label);
  EXPECT_EQ(labels.size(), 4u);
  EXPECT_EQ(s.val.size(), 4u);
}

TEST(Split, RejectsSingletonSpeaker) {
  auto d = toy_dataset(3, 3);
  d.examples.erase(d.examples.begin() + 1, d.examples.begin() + 3);
  EXPECT_THROW(split_train_val(d, 0.1, 0), std::invalid_argument);
}

TEST(MakeDataset, LabelsTruncatesAndSkipsEmpty) {
  std::vector<FacsSequence> corpus(3);
  corpus[0] = {{1, 3, 4, 5, 6}, 20, "a", "bob"};
  corpus[1] = {{3}, 20, "b", "alice"};
  corpus[2] = {{}, 20, "c", "alice"};
  auto d = make_dataset(corpus, 3);
  EXPECT_EQ(d.speakers, (std::vector<std::string>{"alice", "bob"}));
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.skipped_empty, 1u);
  EXPECT_EQ(d.examples[0].label, 1);
  EXPECT_EQ(d.examples[0].tokens.size(), 3u);
  EXPECT_THROW(make_dataset(corpus, 3, {"bob"}), std::invalid_argument);
}

TEST(AttachXvectors, ListsMissing) {
  auto d = toy_dataset(2, 2);
  XVectorTable table;
  table.dim = 2;
  table.entries["spk0-0"] = {1.0, 2.0};
  try {
    attach_xvectors(d, table);
    FAIL() << "expected a throw";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("spk1-1"), std::string::npos);
  }
}

TEST(Train, EveryExampleOncePerEpochWithShortBatchKept) {
  auto d = toy_dataset(3, 9);
  BiasModel model(3);
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 4;
  c.early_stop_patience = 100;
  auto split = split_train_val(d, 0.2, 0);
  auto run = train_on_split(c, split.train, split.val, model);
  const std::size_t n = split.train.size();
  const std::size_t per_epoch = (n + 3) / 4;
  ASSERT_EQ(model.seen.size(), per_epoch * c.epochs);
  EXPECT_EQ(run.steps.size(), per_epoch * c.epochs);
  for (std::size_t e = 0; e < c.epochs; ++e) {
    std::multiset<int> ids;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      for (int id : model.seen[e * per_epoch + b]) ids.insert(id);
    }
    EXPECT_EQ(ids.size(), n);
    std::set<int> distinct(ids.begin(), ids.end());
    EXPECT_EQ(distinct.size(), n);
    EXPECT_EQ(model.seen[e * per_epoch + per_epoch - 1].size(), n - 4 * (per_epoch - 1));
  }
  for (std::size_t i = 0; i < run.steps.size(); ++i) {
    EXPECT_EQ(run.steps[i].step, i + 1);
    EXPECT_DOUBLE_EQ(run.steps[i].lr, cosine_lr(i, run.steps.size(), c.lr0, c.eta_min));
  }
}

TEST(Train, PatienceZeroStopsAtFirstNonImprovement) {
  // A bias-only model cannot beat chance on balanced classes, so the second
  // evaluation never improves on the first.
  auto d = toy_dataset(3, 10);
  BiasModel model(3);
  TrainConfig c;
  c.epochs = 20;
  c.batch_size = 8;
  c.early_stop_patience = 0;
  auto run = train(c, d, model);
  EXPECT_EQ(run.evals.size(), 2u);
  EXPECT_EQ(run.stop_reason, StopReason::early_stopped);
}

TEST(Train, LearnsSeparableDataAndRestoresBest) {
  Rng rng(5);
  auto d = separable_dataset(3, 30, rng);
  Rng init(1);
  RhythmEncoderModel<float> model(tiny_encoder(3 + 3, 3), init);
  TrainConfig c;
  c.epochs = 15;
  c.batch_size = 8;
  c.lr0 = 3e-3;
  c.val_fraction = 0.2;
  c.seed = 11;
  auto split = split_train_val(d, c.val_fraction, c.seed);
  auto run = train_on_split(c, split.train, split.val, model);
  EXPECT_GE(run.best_balanced_accuracy, 0.9);
  double max_seen = 0.0;
  for (const auto& e : run.evals) max_seen = std::max(max_seen, e.balanced_accuracy);
  EXPECT_EQ(run.best_balanced_accuracy, max_seen);
  EXPECT_EQ(balanced_accuracy(evaluate(model, split.val)).value, run.best_balanced_accuracy);
}

TEST(Train, SameSeedSameHistory) {
  Rng rng(6);
  auto d = separable_dataset(3, 12, rng);
  auto once = [&] {
    Rng init(derive_seed(4, "init"));
    RhythmEncoderModel<float> model(tiny_encoder(6, 3), init);
    TrainConfig c;
    c.epochs = 3;
    c.batch_size = 5;
    c.seed = 4;
    auto run = train(c, d, model);
    return std::make_pair(loss_log_csv(run), snapshot_parameters(model));
  };
  auto a = once();
  auto b = once();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Train, RejectsMismatchedHead) {
  auto d = toy_dataset(3, 4);
  BiasModel model(5);
  EXPECT_THROW(train(TrainConfig{}, d, model), std::invalid_argument);
}

TEST(Logs, CsvHeaders) {
  TrainRun run;
  run.steps.push_back({1, 1, 0.001, 2.5});
  run.evals.push_back({1, 0.5});
  EXPECT_EQ(loss_log_csv(run), "step,epoch,lr,loss\n1,1,0.001,2.5\n");
  EXPECT_EQ(val_log_csv(run), "epoch,balanced_accuracy\n1,0.5\n");
}
