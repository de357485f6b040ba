#include <benchmark/benchmark.h>

#include <filesystem>
#include <string>

#include <unistd.h>

#include "sealtrain/bench.hpp"
#include "sealtrain/mirror.hpp"

using namespace sealtrain;

namespace {

std::filesystem::path scratch(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("sealtrain-bench-" + std::to_string(::getpid()) + "-" + name);
}

// range(0) conv layers of 16 filters.
void BM_MirrorOut(benchmark::State& state) {
    const auto path = scratch("mirror.pm");
    {
        const auto key = crypto::generate_key();
        const auto m = nn::build_model<float>(harness::conv_stack_config(static_cast<std::size_t>(state.range(0))), 1);
        auto h = pm::Heap::create(path, 8 << 20);
        const auto pmm = mirror::alloc_mirror_model(h, m);
        std::uint64_t iter = 0;
        for (auto _ : state) mirror::mirror_out(h, pmm, m, ++iter, iter, key);
        state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(m.parameter_bytes()));
    }
    std::filesystem::remove(path);
}
BENCHMARK(BM_MirrorOut)->DenseRange(1, 12, 1)->Unit(benchmark::kMicrosecond);

void BM_MirrorIn(benchmark::State& state) {
    const auto path = scratch("mirror-in.pm");
    {
        const auto key = crypto::generate_key();
        auto m = nn::build_model<float>(harness::conv_stack_config(static_cast<std::size_t>(state.range(0))), 1);
        auto h = pm::Heap::create(path, 8 << 20);
        const auto pmm = mirror::alloc_mirror_model(h, m);
        mirror::mirror_out(h, pmm, m, 1, 1, key);
        for (auto _ : state) benchmark::DoNotOptimize(mirror::mirror_in(h, pmm, m, key).iter);
        state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(m.parameter_bytes()));
    }
    std::filesystem::remove(path);
}
BENCHMARK(BM_MirrorIn)->DenseRange(1, 12, 1)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
