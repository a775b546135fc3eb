// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "rhythmid/encoder.hpp"
#include "rhythmid/ops.hpp"

using namespace rhythmid;

namespace {

RhythmEncoderConfig config(AttentionImpl attention) {
  RhythmEncoderConfig c;
  c.d_model = 64;
  c.n_heads = 4;
  c.n_layers = 2;
  c.ffn_dim = 128;
  c.max_len = 1024;
  c.vocab_size = 30;
  c.n_speakers = 10;
  c.attention = attention;
  return c;
}

Batch random_batch(std::size_t rows, std::size_t len, Rng& rng) {
  std::vector<std::vector<std::int32_t>> seqs(rows);
  std::vector<std::int32_t> labels(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    seqs[r].resize(len - rng.below(len / 4));
    for (auto& t : seqs[r]) t = static_cast<std::int32_t>(1 + rng.below(29));
    labels[r] = static_cast<std::int32_t>(rng.below(10));
  }
  return make_batch(seqs, labels);
}

void BM_EncoderForward(benchmark::State& state) {
  const auto impl = state.range(1) == 0 ? AttentionImpl::banded : AttentionImpl::dense;
  Rng rng(1);
  RhythmEncoderModel<float> model(config(impl), rng);
  auto batch = random_batch(32, static_cast<std::size_t>(state.range(0)), rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(batch, false, rng).logits);
}
BENCHMARK(BM_EncoderForward)->Args({160, 0})->Args({160, 1})->Args({512, 0});

void BM_EncoderTrainStep(benchmark::State& state) {
  Rng rng(2);
  RhythmEncoderModel<float> model(config(AttentionImpl::banded), rng);
  auto batch = random_batch(32, static_cast<std::size_t>(state.range(0)), rng);
  for (auto _ : state) {
    for (auto& p : model.parameters()) p.tensor.zero_grad();
    backward(cross_entropy(model.forward(batch, true, rng).logits, batch.labels));
  }
}
BENCHMARK(BM_EncoderTrainStep)->Arg(96)->Arg(160);

}  // namespace
