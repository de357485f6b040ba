#include <benchmark/benchmark.h>


#include "sealtrain/network.hpp"
#include "sealtrain/rng.hpp"

using namespace sealtrain;

namespace {

// Five conv layers on 28x28, the shape of the MNIST config.
nn::NetConfig mnist_like() {
    nn::NetConfig cfg;
    cfg.layers = {nn::ConvSpec{8, 3, 1, 1, nn::Activation::kLeaky},  nn::MaxPoolSpec{2, 2},
                  nn::ConvSpec{16, 3, 1, 1, nn::Activation::kLeaky}, nn::MaxPoolSpec{2, 2},
                  nn::ConvSpec{32, 3, 1, 1, nn::Activation::kLeaky}, nn::ConvSpec{32, 3, 1, 1, nn::Activation::kLeaky},
                  nn::ConvSpec{32, 3, 1, 1, nn::Activation::kLeaky}, nn::ConnectedSpec{10, nn::Activation::kLinear},
                  nn::SoftmaxSpec{}};
    return cfg;
}

nn::Batch random_batch(std::size_t n, std::size_t dim, std::size_t classes) {
    SplitMix64 rng(3);
    nn::Batch b{n, dim, classes, std::vector<float>(n * dim), std::vector<float>(n * classes, 0.0f)};
    for (auto& v : b.inputs) v = static_cast<float>(rng.uniform());
    for (std::size_t i = 0; i < n; ++i) b.labels[i * classes + rng.below(classes)] = 1.0f;
    return b;
}

void BM_Forward(benchmark::State& state) {
    auto m = nn::build_model<float>(mnist_like(), 1);
    const auto b = random_batch(static_cast<std::size_t>(state.range(0)), m.input.size(), m.classes());
    for (auto _ : state) benchmark::DoNotOptimize(nn::forward(m, b, nn::Pass::kInference).loss);
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_TrainIteration(benchmark::State& state) {
    auto m = nn::build_model<float>(mnist_like(), 1);
    const auto b = random_batch(static_cast<std::size_t>(state.range(0)), m.input.size(), m.classes());
    for (auto _ : state) benchmark::DoNotOptimize(nn::train_iteration(m, b, 0.01f));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainIteration)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
