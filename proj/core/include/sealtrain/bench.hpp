#pragma once

// Experiment drivers. Every measurement becomes one CSV row:
//   experiment,model_size_bytes,phase,value,unit,seed

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sealtrain/crypto_envelope.hpp"
#include "sealtrain/durable_txn.hpp"
#include "sealtrain/net_config.hpp"
#include "sealtrain/network.hpp"
#include "sealtrain/rng.hpp"

namespace sealtrain::harness {

struct CsvRow {
    std::string experiment;
    std::uint64_t model_size_bytes = 0;
    std::string phase;
    double value = 0.0;
    std::string unit;
    std::uint64_t seed = 0;
};

struct BenchReport {
    std::vector<CsvRow> rows;

    void add(CsvRow r) { rows.push_back(std::move(r)); }
    void append(const BenchReport& other);
    void write_csv(std::ostream& os, bool header = true) const;
    void write_csv(const std::filesystem::path& path) const;
    [[nodiscard]] std::vector<CsvRow> select(const std::string& experiment) const;
};

inline constexpr const char* kCsvHeader = "experiment,model_size_bytes,phase,value,unit,seed";

// ---- SPS: random swaps inside transactions over a persistent u64 array ----

struct SpsArray {
    pm::PmRef ref;
    std::uint64_t len = 0;
};

/// Allocates [0, 1, ..., len-1] and hangs it off root slot kSpsArray.
SpsArray sps_init(pm::Heap& h, std::uint64_t len);
std::optional<SpsArray> sps_find(const pm::Heap& h);
/// One transaction of `swaps` random swaps.
void sps_txn(pm::Heap& h, const SpsArray& a, std::size_t swaps, SplitMix64& rng);
std::vector<std::uint64_t> sps_values(const pm::Heap& h, const SpsArray& a);
bool sps_is_permutation(const pm::Heap& h, const SpsArray& a);

struct SpsOptions {
    std::uint64_t array_len = 10000;
    std::vector<std::size_t> txn_sizes = {2, 8, 64, 512, 2048};
    double seconds = 1.0;
    std::uint64_t seed = 1;
};

/// Per transaction size: swaps/s, transactions, and fences per transaction.
BenchReport bench_sps(pm::Heap& h, const SpsOptions& opts);

struct SpsCampaignOptions {
    std::filesystem::path work_dir;
    std::uint64_t array_len = 10000;
    std::size_t injections = 1000;
    std::size_t max_swaps = 64;
    std::uint64_t seed = 1;
    std::size_t line_size = 64;
};

struct SpsCampaignResult {
    std::size_t injections = 0;
    std::size_t permutations = 0;  // recovered images that were permutations
    std::size_t mid_txn = 0;       // injections taken inside an open transaction
};

/// Runs SPS with crash tracking and, at random store/flush/fence events,
/// writes a crash image with a random adversary, recovers it and checks the
/// array.
SpsCampaignResult sps_crash_campaign(const SpsCampaignOptions& opts);

// ---- Mirror vs. file checkpoint ----

/// `layers` 3x3 leaky conv layers (16 filters, same padding) on 28x28x1, then softmax.
nn::NetConfig conv_stack_config(std::size_t layers, int filters = 16);

struct MirrorBenchOptions {
    std::vector<std::size_t> layer_counts = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    std::size_t repetitions = 5;
    std::filesystem::path work_dir;
    std::uint64_t seed = 1;
    int filters = 16;
};

/// Experiments mirror_out, mirror_in, ckpt_save, ckpt_restore (phases plus
/// total, seconds) and metadata (envelope overhead bytes).
BenchReport bench_mirror(const crypto::Key128& key, const MirrorBenchOptions& opts);

/// Flat-file checkpoint with the mirror's envelope-per-buffer layout.
struct CheckpointTimings {
    double encrypt = 0.0;
    double write = 0.0;  // write + flush + fsync
    double read = 0.0;
    double decrypt = 0.0;
};
void checkpoint_save(const std::filesystem::path& path, const nn::Model& m, const crypto::Key128& key,
                     CheckpointTimings* t = nullptr);
void checkpoint_load(const std::filesystem::path& path, nn::Model& m, const crypto::Key128& key,
                     CheckpointTimings* t = nullptr);

// ---- Batch decryption overhead ----

struct BatchBenchOptions {
    std::filesystem::path work_dir;
    nn::NetConfig config;
    std::uint64_t rows = 4096;
    std::size_t iterations = 50;
    std::uint64_t seed = 1;
};

/// Per-iteration training time with batches from the encrypted matrix versus
/// from plaintext memory.
BenchReport bench_batch_decrypt(const crypto::Key128& key, const BatchBenchOptions& opts);

}  // namespace sealtrain::harness
