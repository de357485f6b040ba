#include <benchmark/benchmark.h>

#include <vector>

#include "sealtrain/crypto_envelope.hpp"

using namespace sealtrain;

namespace {

const crypto::Key128& key() {
    static const auto k = crypto::generate_key();
    return k;
}

void BM_Encrypt(benchmark::State& state) {
    const std::vector<std::byte> plain(static_cast<std::size_t>(state.range(0)), std::byte{7});
    std::vector<std::byte> out(plain.size() + crypto::kEnvelopeOverhead);
    for (auto _ : state) {
        crypto::encrypt_into(key(), plain, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Encrypt)->RangeMultiplier(16)->Range(64, 4 << 20);

void BM_Decrypt(benchmark::State& state) {
    const std::vector<std::byte> plain(static_cast<std::size_t>(state.range(0)), std::byte{7});
    std::vector<std::byte> stored(plain.size() + crypto::kEnvelopeOverhead);
    crypto::encrypt_into(key(), plain, stored);
    std::vector<std::byte> out(plain.size());
    for (auto _ : state) {
        crypto::decrypt_into(key(), stored, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Decrypt)->RangeMultiplier(16)->Range(64, 4 << 20);

}  // namespace

BENCHMARK_MAIN();
