#include <benchmark/benchmark.h>

#include <filesystem>
#include <string>

#include <unistd.h>

#include "sealtrain/bench.hpp"
#include "sealtrain/durable_txn.hpp"
#include "sealtrain/rng.hpp"

using namespace sealtrain;

namespace {

std::filesystem::path scratch(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("sealtrain-bench-" + std::to_string(::getpid()) + "-" + name);
}

// One SPS transaction of range(0) swaps on a 10k-element array.
void BM_SpsTxn(benchmark::State& state) {
    const auto path = scratch("sps.pm");
    {
        auto h = pm::Heap::create(path, 1 << 20);
        const auto a = harness::sps_init(h, 10000);
        SplitMix64 rng(1);
        const auto swaps = static_cast<std::size_t>(state.range(0));
        for (auto _ : state) harness::sps_txn(h, a, swaps, rng);
        state.counters["swaps/s"] =
            benchmark::Counter(static_cast<double>(state.iterations() * swaps), benchmark::Counter::kIsRate);
    }
    std::filesystem::remove(path);
}
BENCHMARK(BM_SpsTxn)->Arg(2)->Arg(8)->Arg(64)->Arg(512)->Arg(2048);

// Commit cost as a function of the bytes written.
void BM_CommitBytes(benchmark::State& state) {
    const auto path = scratch("commit.pm");
    {
        const auto n = static_cast<std::uint64_t>(state.range(0));
        auto h = pm::Heap::create(path, n + 4096);
        h.begin();
        const auto obj = h.alloc(n);
        h.commit();
        const std::vector<std::byte> data(n, std::byte{1});
        for (auto _ : state) {
            h.begin();
            h.store(obj, data);
            h.commit();
        }
        state.SetBytesProcessed(state.iterations() * state.range(0));
    }
    std::filesystem::remove(path);
}
BENCHMARK(BM_CommitBytes)->RangeMultiplier(8)->Range(64, 4 << 20);

}  // namespace

BENCHMARK_MAIN();
