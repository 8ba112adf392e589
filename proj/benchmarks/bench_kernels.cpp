#include <benchmark/benchmark.h>

#include "lrlab/data.hpp"
#include "lrlab/linalg.hpp"
#include "lrlab/local_rank.hpp"
#include "lrlab/mlp.hpp"
#include "lrlab/rng.hpp"

namespace {

using namespace lrlab;

Matrix gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

void BM_JacobiSvd(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = gaussian(n, n, 1);
  for (auto _ : state) benchmark::DoNotOptimize(svd(a));
}
BENCHMARK(BM_JacobiSvd)->Arg(16)->Arg(64)->Arg(200);

void BM_EpsilonRankFast(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = gaussian(n, 784, 2);
  for (auto _ : state) benchmark::DoNotOptimize(epsilon_rank_fast(a, 1e-2));
}
BENCHMARK(BM_EpsilonRankFast)->Arg(10)->Arg(200);

// One layer's local rank over a 256-point sample, MNIST-sized network.
void BM_LocalRankMnistLayer(benchmark::State& state) {
  const std::vector<std::size_t> sizes{784, 200, 200, 200, 10};
  const MlpParams p = init_mlp(sizes, 3);
  const Matrix sample = gaussian(256, 784, 4);
  const auto layer = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(local_rank(p, sample, layer, 1e-2));
}
BENCHMARK(BM_LocalRankMnistLayer)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_TrainingStep(benchmark::State& state) {
  const std::vector<std::size_t> sizes{784, 200, 200, 200, 10};
  MlpParams p = init_mlp(sizes, 5);
  const Matrix x = gaussian(64, 784, 6);
  std::vector<std::uint32_t> labels(64);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint32_t>(i % 10);
  TrainConfig cfg;
  cfg.layer_sizes = sizes;
  cfg.loss = LossKind::SoftmaxCrossEntropy;
  AdamState adam = AdamState::fresh(p);
  for (auto _ : state) {
    const LossAndGrad lg = loss_and_grad(p, x, labels, cfg.loss);
    adam_step(p, lg.grads, adam, cfg);
  }
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
