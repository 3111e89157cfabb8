#include <benchmark/benchmark.h>

#include "mistseg/ops.hpp"
#include "mistseg/random.hpp"
#include "mistseg/treegraph.hpp"

using namespace mistseg;

namespace {

void BM_GridTree(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(0);
  const Tensor img = rng.uniform_tensor({3, n, n}, 0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(tree::grid_tree(img));
  state.SetComplexityN(static_cast<long>(n * n));
}
BENCHMARK(BM_GridTree)->RangeMultiplier(2)->Range(16, 128)->Complexity();

void BM_TreeFilterDp(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const auto tr = tree::grid_tree(rng.uniform_tensor({3, n, n}, 0, 1));
  const Tensor s = rng.uniform_tensor({1, n, n}, 0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(tree::tree_filter(tr, 0.02, s));
  state.SetComplexityN(static_cast<long>(n * n));
}
BENCHMARK(BM_TreeFilterDp)->RangeMultiplier(2)->Range(16, 128)->Complexity(benchmark::oN);

void BM_TreeFilterDense(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const auto tr = tree::grid_tree(rng.uniform_tensor({3, n, n}, 0, 1));
  const Tensor s = rng.uniform_tensor({1, n, n}, 0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(tree::tree_filter_dense(tr, 0.02, s.data()));
  state.SetComplexityN(static_cast<long>(n * n));
}
BENCHMARK(BM_TreeFilterDense)->RangeMultiplier(2)->Range(16, 64)->Complexity(benchmark::oNSquared);

void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Tensor x = rng.normal_tensor({3, c, 32, 32});
  const Tensor k = rng.normal_tensor({c, c, 3, 3});
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, std::nullopt, 1, 1));
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(16)->Arg(32);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  Tensor x = rng.normal_tensor({3, c, 32, 32}).set_requires_grad(true);
  Tensor k = rng.normal_tensor({c, c, 3, 3}).set_requires_grad(true);
  for (auto _ : state) {
    backward(sum(conv2d(x, k, std::nullopt, 1, 1)));
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(8)->Arg(16)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
