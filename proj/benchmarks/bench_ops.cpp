// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "rhythmid/attention.hpp"
#include "rhythmid/ops.hpp"
#include "rhythmid/rng.hpp"

using namespace rhythmid;

namespace {

Tensor<float> random_tensor(Shape shape, Rng& rng, bool grad = false) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor<float>(std::move(shape), std::move(v), grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  auto a = random_tensor({n, n}, rng);
  auto b = random_tensor({n, n}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  auto a = random_tensor({n, n}, rng, true);
  auto b = random_tensor({n, n}, rng, true);
  for (auto _ : state) {
    a.zero_grad();
    b.zero_grad();
    backward(sum(matmul(a, b)));
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(128);

// [batch * heads, len, head_dim] with a radius-2 band.
void BM_LocalAttention(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  auto q = random_tensor({32 * 4, len, 16}, rng);
  auto k = random_tensor({32 * 4, len, 16}, rng);
  auto v = random_tensor({32 * 4, len, 16}, rng);
  std::vector<std::uint8_t> valid(32 * len, 1);
  NoGradGuard no_grad;
  for (auto _ : state) {
    benchmark::DoNotOptimize(local_attention(q, k, v, 2, valid, 4, 0.25f, 0.0, rng, false));
  }
}
BENCHMARK(BM_LocalAttention)->Arg(128)->Arg(512);

}  // namespace
