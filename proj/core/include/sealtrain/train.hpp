#pragma once

// Training workflow over an encrypted persistent heap:
//
//   open heap (recovering if needed)
//   load the training matrix if it is not there yet
//   mirror_in and resume at pm.iter, or allocate a fresh mirror
//   loop: decrypt_batch, train_iteration, mirror_out every mirror_frequency
//
// The loss log is a CSV "iteration,loss". A line is appended before the
// mirror_out that covers it, and on resume the log is cut back to pm.iter
// lines, so the concatenated log of an interrupted run matches an
// uninterrupted one.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "sealtrain/crypto_envelope.hpp"
#include "sealtrain/dataset.hpp"
#include "sealtrain/net_config.hpp"
#include "sealtrain/network.hpp"

namespace sealtrain::harness {

enum class ResumeMode {
    /// Restore parameters, iter and the batch RNG: bit-identical continuation.
    kExactReplay,
    /// Restore parameters and iter; the batch RNG is reseeded from (seed, iter).
    kNoReplay,
    /// Ignore the mirror and start from iteration 0 every launch.
    kNoRestore,
};

const char* to_string(ResumeMode m) noexcept;

struct TrainRun {
    TrainRun(std::filesystem::path heap, nn::NetConfig cfg, crypto::Key128 k)
        : heap_path(std::move(heap)), config(std::move(cfg)), key(std::move(k)) {}

    std::filesystem::path heap_path;
    nn::NetConfig config;
    crypto::Key128 key;
    std::uint64_t seed = 1;
    std::optional<std::uint64_t> max_iter;  // overrides config.max_iter
    std::uint64_t mirror_frequency = 1;
    std::optional<std::filesystem::path> loss_log;
    ResumeMode mode = ResumeMode::kExactReplay;
    std::chrono::milliseconds iter_delay{0};
    /// Loaded into the heap when it holds no training matrix.
    std::optional<data::DatasetSource> data;
    /// Stop (as if preempted) after this many iterations in this launch.
    std::optional<std::uint64_t> stop_after;
    /// Polled between iterations; set from a signal handler.
    const std::atomic<bool>* stop_flag = nullptr;
};

struct TrainResult {
    std::uint64_t start_iter = 0;
    std::uint64_t final_iter = 0;
    bool restored = false;
    bool completed = false;  // reached max_iter
    std::vector<double> losses;  // this launch only
    nn::Model model;
};

TrainResult train_model(const TrainRun& run);

/// Seed of the batch RNG for a fresh run.
std::uint64_t initial_rng_state(std::uint64_t seed) noexcept;
/// Batch RNG after a no-replay resume at `iter`.
std::uint64_t reseeded_rng_state(std::uint64_t seed, std::uint64_t iter) noexcept;

struct LossEntry {
    std::uint64_t iteration = 0;
    double loss = 0.0;
};

std::vector<LossEntry> read_loss_log(const std::filesystem::path& path);

/// Decrypts the mirrored model from `heap_path`. Throws if no snapshot exists.
nn::Model load_trained_model(const std::filesystem::path& heap_path, const nn::NetConfig& cfg,
                             const crypto::Key128& key);

/// Test-set accuracy of the mirrored model.
double infer(const std::filesystem::path& heap_path, const nn::NetConfig& cfg, const crypto::Key128& key,
             const data::Dataset& test);

}  // namespace sealtrain::harness
