// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "rhythmid/encoder.hpp"
#include "rhythmid/ops.hpp"

using namespace rhythmid;

namespace {

RhythmEncoderConfig small_config(std::size_t layers = 2) {
  RhythmEncoderConfig c;
  c.d_model = 16;
  c.n_heads = 4;
  c.n_layers = layers;
  c.ffn_dim = 32;
  c.attn_window_radius = 2;
  c.dropout_rate = 0.1;
  c.max_len = 64;
  c.vocab_size = 10;
  c.n_speakers = 4;
  return c;
}

std::vector<std::int32_t> random_tokens(Rng& rng, std::size_t n) {
  std::vector<std::int32_t> t(n);
  for (auto& x : t) x = static_cast<std::int32_t>(1 + rng.below(9));
  return t;
}

}  // namespace

TEST(EncoderConfig, Validation) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Batch, PadsAndMarksValidity) {
  std::vector<std::vector<std::int32_t>> seqs = {{3, 4, 5}, {6}};
  std::vector<std::int32_t> labels = {1, 0};
  auto b = make_batch(seqs, labels);
  EXPECT_EQ(b.rows, 2u);
  EXPECT_EQ(b.len, 3u);
  EXPECT_EQ(b.tokens, (std::vector<std::int32_t>{3, 4, 5, 6, 0, 0}));
  EXPECT_EQ(b.valid, (std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0}));
  std::vector<std::vector<std::int32_t>> empty = {{}};
  EXPECT_THROW(make_batch(empty, std::vector<std::int32_t>{0}), std::invalid_argument);
}

TEST(PositionalEncoding, SinusoidValues) {
  auto pe = positional_encoding<double>(4, 6);
  for (std::size_t pos = 0; pos < 4; ++pos) {
    for (std::size_t i = 0; i < 3; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * i / 6.0);
      EXPECT_NEAR(pe[pos * 6 + 2 * i], std::sin(angle), 1e-12);
      EXPECT_NEAR(pe[pos * 6 + 2 * i + 1], std::cos(angle), 1e-12);
    }
  }
}

TEST(Encoder, ShapesAndParameterNames) {
  Rng rng(1);
  RhythmEncoderModel<float> model(small_config(), rng);
  std::vector<std::vector<std::int32_t>> seqs = {random_tokens(rng, 7), random_tokens(rng, 3)};
  auto batch = make_batch(seqs, std::vector<std::int32_t>{0, 3});
  auto out = model.forward(batch, false, rng);
  EXPECT_EQ(out.pooled.shape(), (Shape{2, 16}));
  EXPECT_EQ(out.logits.shape(), (Shape{2, 4}));

  auto params = model.parameters();
  EXPECT_EQ(params.front().name, "embedding");
  EXPECT_EQ(params.back().name, "head.bias");
  std::set<std::string> names;
  for (const auto& p : params) names.insert(p.name);
  EXPECT_EQ(names.size(), params.size());
  EXPECT_TRUE(names.count("layer1.ffn.w2"));
  EXPECT_EQ(params.size(), 1u + 2u * 16u + 2u);
}

TEST(Encoder, InitializationStatistics) {
  Rng rng(2);
  auto c = small_config();
  c.d_model = 64;
  c.n_heads = 4;
  c.vocab_size = 400;
  RhythmEncoderModel<double> model(c, rng);
  const auto& layer = model.layers()[0];
  const double bound = std::sqrt(6.0 / (64 + 64));
  for (double w : layer.wq.values()) ASSERT_LE(std::abs(w), bound);
  for (double b : layer.bq.values()) ASSERT_EQ(b, 0.0);
  for (double g : layer.ln1_gain.values()) ASSERT_EQ(g, 1.0);
  double s2 = 0.0;
  for (double e : model.embedding().values()) s2 += e * e;
  EXPECT_NEAR(s2 / model.embedding().numel(), 1.0 / 64, 0.002);
}

TEST(Encoder, PaddingDoesNotChangeRealRows) {
  Rng rng(3);
  RhythmEncoderModel<double> model(small_config(), rng);
  auto a = random_tokens(rng, 5);
  std::vector<std::vector<std::int32_t>> alone = {a};
  std::vector<std::vector<std::int32_t>> padded = {a, random_tokens(rng, 11)};
  auto x = model.forward(make_batch(alone, std::vector<std::int32_t>{0}), false, rng).logits;
  auto y = model.forward(make_batch(padded, std::vector<std::int32_t>{0, 0}), false, rng).logits;
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(x[j], y[j], 1e-12);
}

TEST(Encoder, LocalityOfOneLayer) {
  Rng rng(4);
  RhythmEncoderModel<double> model(small_config(1), rng);
  auto toks = random_tokens(rng, 12);
  std::vector<std::vector<std::int32_t>> s1 = {toks};
  auto base = model.encode(make_batch(s1, std::vector<std::int32_t>{0}), false, rng);
  toks[9] = toks[9] == 1 ? 2 : 1;
  std::vector<std::vector<std::int32_t>> s2 = {toks};
  auto moved = model.encode(make_batch(s2, std::vector<std::int32_t>{0}), false, rng);
  for (std::size_t i = 0; i < 12; ++i) {
    double diff = 0.0;
    for (std::size_t d = 0; d < 16; ++d) diff = std::max(diff, std::abs(base[i * 16 + d] - moved[i * 16 + d]));
    if (i + 3 <= 9 || i >= 12) {
      EXPECT_LE(diff, 1e-12) << "position " << i;
    } else if (i >= 7) {
      EXPECT_GT(diff, 0.0) << "position " << i;
    }
  }
}

TEST(Encoder, DenseAndBandedAgree) {
  Rng rng(5);
  auto c = small_config();
  RhythmEncoderModel<double> banded(c, rng);
  c.attention = AttentionImpl::dense;
  Rng rng2(5);
  RhythmEncoderModel<double> dense(c, rng2);
  std::vector<std::vector<std::int32_t>> seqs = {random_tokens(rng, 9), random_tokens(rng, 4)};
  auto batch = make_batch(seqs, std::vector<std::int32_t>{0, 1});
  auto a = banded.forward(batch, false, rng).logits;
  auto b = dense.forward(batch, false, rng).logits;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Encoder, CloneIsIndependent) {
  Rng rng(6);
  RhythmEncoderModel<float> model(small_config(), rng);
  auto copy = model.clone();
  copy.parameters()[0].tensor.mutable_values()[0] += 1.0f;
  EXPECT_NE(copy.embedding()[0], model.embedding()[0]);
  auto shared = model;
  shared.parameters()[0].tensor.mutable_values()[0] += 1.0f;
  EXPECT_EQ(shared.embedding()[0], model.embedding()[0]);
}

TEST(Encoder, EvalIsDeterministicTrainingIsNot) {
  Rng rng(7);
  RhythmEncoderModel<float> model(small_config(), rng);
  auto toks = random_tokens(rng, 10);
  auto e1 = model.embed_utterance(toks);
  auto e2 = model.embed_utterance(toks);
  EXPECT_EQ(e1, e2);
  std::vector<std::vector<std::int32_t>> seqs = {toks};
  auto batch = make_batch(seqs, std::vector<std::int32_t>{0});
  Rng d1(1), d2(2);
  auto t1 = model.forward(batch, true, d1).pooled;
  auto t2 = model.forward(batch, true, d2).pooled;
  bool differs = false;
  for (std::size_t i = 0; i < t1.numel(); ++i) differs |= t1[i] != t2[i];
  EXPECT_TRUE(differs);
}

TEST(Encoder, RejectsOverlongSequence) {
  Rng rng(8);
  auto c = small_config();
  c.max_len = 4;
  RhythmEncoderModel<float> model(c, rng);
  std::vector<std::vector<std::int32_t>> seqs = {random_tokens(rng, 5)};
  EXPECT_THROW(model.forward(make_batch(seqs, std::vector<std::int32_t>{0}), false, rng),
               std::invalid_argument);
}
