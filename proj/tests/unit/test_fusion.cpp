// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include "rhythmid/fusion.hpp"
#include "rhythmid/ops.hpp"

using namespace rhythmid;

namespace {

RhythmEncoderConfig enc() {
  RhythmEncoderConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.ffn_dim = 16;
  c.max_len = 16;
  c.vocab_size = 6;
  c.n_speakers = 3;
  return c;
}

Batch batch_with_xvectors(std::size_t dim) {
  std::vector<std::vector<std::int32_t>> seqs = {{3, 4, 4}, {5, 1}};
  auto b = make_batch(seqs, std::vector<std::int32_t>{0, 2});
  b.xvector_dim = dim;
  b.xvectors.assign(2 * dim, 0.25);
  b.xvectors[dim] = -1.0;
  return b;
}

}  // namespace

TEST(XVectors, LoadWriteRoundTrip) {
  XVectorTable t;
  t.dim = 3;
  t.entries["a"] = {0.1, -2.5e-7, 3.0};
  t.entries["b"] = {1.0 / 3.0, 0.0, -1e300};
  std::stringstream io;
  write_xvectors(io, t);
  auto back = load_xvectors(io);
  EXPECT_EQ(back.dim, 3u);
  EXPECT_EQ(back.entries, t.entries);
  EXPECT_EQ(*back.find("a"), t.entries["a"]);
  EXPECT_EQ(back.find("zzz"), nullptr);
}

TEST(XVectors, ErrorsNameTheLine) {
  auto expect_line = [](const std::string& text, const std::string& needle) {
    std::istringstream in(text);
    try {
      load_xvectors(in);
      FAIL() << "no throw for: " << text;
    } catch (const std::invalid_argument& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_line("dim\t2\na\t1\t2\nb\t1\n", "line 3");
  expect_line("dim\t2\na\t1\t2\na\t1\t2\n", "line 3");
  expect_line("dim\t2\na\t1\tx\n", "line 2");
  expect_line("dim\t2\na\t1\tnan\n", "line 2");
  expect_line("2\na\t1\t2\n", "line 1");
}

TEST(Fusion, ShapesAndParameterNames) {
  Rng rng(1);
  RhythmEncoderModel<float> rhythm(enc(), rng);
  FusionConfig fc;
  fc.xvector_dim = 5;
  fc.projection_dim = 4;
  FusionAssembly<float> concat(rhythm.clone(), fc, 3, rng);
  EXPECT_EQ(concat.head_input_dim(), 8u);
  fc.op = FusionOp::sum;
  FusionAssembly<float> summed(rhythm.clone(), fc, 3, rng);
  EXPECT_EQ(summed.head_input_dim(), 4u);

  auto b = batch_with_xvectors(5);
  EXPECT_EQ(concat.logits(b, false, rng).shape(), (Shape{2, 3}));
  EXPECT_EQ(summed.logits(b, false, rng).shape(), (Shape{2, 3}));

  auto params = concat.parameters();
  EXPECT_EQ(params.front().name, "rhythm.embedding");
  EXPECT_EQ(params[params.size() - 6].name, "fusion.proj_x.weight");
  EXPECT_EQ(params.back().name, "fusion.head.bias");
}

TEST(Fusion, RequiresMatchingXvectors) {
  Rng rng(2);
  FusionConfig fc;
  fc.xvector_dim = 5;
  FusionAssembly<float> model(RhythmEncoderModel<float>(enc(), rng), fc, 3, rng);
  auto b = batch_with_xvectors(4);
  EXPECT_THROW(model.logits(b, false, rng), std::invalid_argument);
}

TEST(Fusion, GradientReachesRhythmEncoder) {
  Rng rng(3);
  FusionConfig fc;
  fc.xvector_dim = 5;
  fc.projection_dim = 4;
  FusionAssembly<double> model(RhythmEncoderModel<double>(enc(), rng), fc, 3, rng);
  auto b = batch_with_xvectors(5);
  backward(cross_entropy(model.logits(b, true, rng), b.labels));
  double g = 0.0;
  for (double v : model.rhythm().embedding().grad()) g += std::abs(v);
  EXPECT_GT(g, 0.0);
}

TEST(Baseline, AffineMap) {
  Tensor<float> w({2, 3}, {1, 0, 2, 0, 1, -1});
  Tensor<float> bias({3}, {0.5f, 0, 0});
  XVectorBaseline<float> head(w, bias);
  Batch b;
  b.rows = 1;
  b.len = 1;
  b.tokens = {3};
  b.valid = {1};
  b.labels = {0};
  b.xvector_dim = 2;
  b.xvectors = {2.0, 3.0};
  auto out = xvector_baseline_forward(head, b);
  EXPECT_FLOAT_EQ(out[0], 2.5f);
  EXPECT_FLOAT_EQ(out[1], 3.0f);
  EXPECT_FLOAT_EQ(out[2], 1.0f);
}
