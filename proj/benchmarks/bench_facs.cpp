// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "rhythmid/synthgen.hpp"

using namespace rhythmid;

namespace {

void BM_FacsEncode(benchmark::State& state) {
  Rng rng(1);
  auto profiles = gen_profiles(4, default_alphabet(), 1.0, rng);
  auto corpus = gen_corpus(profiles, default_texts(), 50, 1.0, rng);
  auto vocab = build_vocabulary(corpus);
  std::size_t frames = 0;
  for (auto _ : state) {
    for (const auto& utt : corpus) {
      auto seq = facs_encode(utt, vocab);
      frames += seq.token_ids.size();
      benchmark::DoNotOptimize(seq);
    }
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(frames));
}
BENCHMARK(BM_FacsEncode);

void BM_GenCorpus(benchmark::State& state) {
  Rng rng(2);
  auto profiles = gen_profiles(10, default_alphabet(), 1.0, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(gen_corpus(profiles, default_texts(), 20, 0.25, rng));
  }
}
BENCHMARK(BM_GenCorpus);

}  // namespace
