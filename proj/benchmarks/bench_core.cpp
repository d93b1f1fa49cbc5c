#include <benchmark/benchmark.h>

#include "ecnn/depgraph.hpp"
#include "ecnn/elastic.hpp"
#include "ecnn/trainer.hpp"
#include "ecnn/zoo.hpp"

using namespace ecnn;

namespace {

template <typename T>
Tensor<T> random_batch(int n, const Shape& chw, std::uint64_t seed) {
  Tensor<T> x({n, chw[0], chw[1], chw[2]});
  Rng rng(seed);
  rng.fill_uniform(x, -1, 1);
  return x;
}

void BM_Conv2dForward(benchmark::State& state) {
  int channels = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor<float> x({8, channels, 16, 16});
  Tensor<float> w({channels, channels, 3, 3});
  rng.fill_uniform(x, -1, 1);
  rng.fill_uniform(w, -1, 1);
  for (auto _ : state) {
    Tensor<float> y = ops::conv2d_forward(x, w, nullptr, 1, 1);
    benchmark::DoNotOptimize(y.data.data());
  }
  state.SetItemsProcessed(state.iterations() * 8);
}

void BM_TinynetForwardEval(benchmark::State& state) {
  ModelGraph<float> m = build<float>(arch_spec("tinynet"), 3);
  Tensor<float> x = random_batch<float>(32, m.input_shape, 5);
  for (auto _ : state) {
    Tensor<float> y = m.forward(x, Mode::Eval);
    benchmark::DoNotOptimize(y.data.data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}

void BM_TinynetTrainStep(benchmark::State& state) {
  ModelGraph<float> m = build<float>(arch_spec("tinynet"), 3);
  Tensor<float> x = random_batch<float>(32, m.input_shape, 5);
  std::vector<int> labels(32);
  for (int i = 0; i < 32; ++i) labels[static_cast<std::size_t>(i)] = i % 4;
  for (auto _ : state) {
    Tape<float> tape;
    auto tf = m.forward_tape(tape, x, Mode::Train);
    auto loss = tp::cross_entropy(tape, tf.logits, labels);
    m.backward(tape, tf, loss);
    benchmark::DoNotOptimize(m.registry());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}

void BM_BuildGroupsResnet56(benchmark::State& state) {
  ModelGraph<float> m = build<float>(arch_spec("resnet56_cifar10"), 3);
  for (auto _ : state) {
    auto groups = depgraph::build_groups(m);
    benchmark::DoNotOptimize(groups.data());
  }
}

void BM_PruneRebuildRoundTrip(benchmark::State& state) {
  ModelGraph<float> m = build<float>(arch_spec("resnet20_cifar10"), 3);
  auto groups = depgraph::build_groups(m);
  std::vector<std::vector<int>> drops(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    if (!groups[gi].prunable) continue;
    for (int c = 0; c + 1 < groups[gi].width; c += 3) drops[gi].push_back(c);
  }
  for (auto _ : state) {
    auto [core, rec] = elastic::hard_prune(m, groups, drops);
    auto [full, mask] = elastic::rebuild(core, rec);
    benchmark::DoNotOptimize(full.registry());
  }
}

void BM_SynthDataset(benchmark::State& state) {
  for (auto _ : state) {
    auto data = trainer::make_synth_dataset<float>(512, 4, 7);
    benchmark::DoNotOptimize(data.images.data.data());
  }
  state.SetItemsProcessed(state.iterations() * 512);
}

BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(26)->Arg(64);
BENCHMARK(BM_TinynetForwardEval);
BENCHMARK(BM_TinynetTrainStep);
BENCHMARK(BM_BuildGroupsResnet56);
BENCHMARK(BM_PruneRebuildRoundTrip);
BENCHMARK(BM_SynthDataset);

}  // namespace

BENCHMARK_MAIN();
