#pragma once

// Encrypted persistent training matrix.
//
//   matrix node: rows | cols | classes | loaded_rows | row_table (PmRef, 16 B)
//   row table:   rows x PmRef (16 B each) to the row envelopes
//
// Each row envelope holds (pixels/255 || one-hot label) as f32. Loading runs
// one transaction per kLoadBatchRows rows. While a load is in progress the
// node hangs off root slot kDataLoad, so a restarted load resumes at
// loaded_rows; the last transaction moves it to root slot kDataMatrix.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "sealtrain/crypto_envelope.hpp"
#include "sealtrain/dataset.hpp"
#include "sealtrain/durable_txn.hpp"
#include "sealtrain/network.hpp"
#include "sealtrain/rng.hpp"

namespace sealtrain::data {

inline constexpr std::uint64_t kMatrixNodeSize = 48;
inline constexpr std::size_t kLoadBatchRows = 1024;

struct PmMatrix {
    pm::PmRef node;
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::uint64_t classes = 0;
    pm::PmRef row_table;
    /// Envelopes decrypted through this handle.
    std::uint64_t envelope_reads = 0;

    [[nodiscard]] std::uint64_t row_plaintext_bytes() const noexcept { return 4 * (cols + classes); }
};

struct LoadOptions {
    std::size_t batch_rows = kLoadBatchRows;
    /// Called after each committed batch with the number of rows loaded.
    std::function<void(std::uint64_t)> progress;
};

/// Heap region size needed to hold a matrix of this shape.
std::uint64_t required_region_bytes(std::uint64_t rows, std::uint64_t cols, std::uint64_t classes);

PmMatrix load_dataset_to_pm(pm::Heap& h, const Dataset& d, const crypto::Key128& key,
                            const LoadOptions& opts = {});
PmMatrix load_dataset_to_pm(pm::Heap& h, const DatasetSource& src, const crypto::Key128& key,
                            const LoadOptions& opts = {});

bool pm_data_exists(const pm::Heap& h);
std::optional<PmMatrix> find_matrix(const pm::Heap& h);
/// Rows committed by an interrupted load, if one is pending.
std::optional<std::uint64_t> pending_load_rows(const pm::Heap& h);

/// Uniform sample with replacement.
std::vector<std::uint64_t> sample_rows(std::uint64_t rows, std::size_t count, SplitMix64& rng);

nn::Batch decrypt_rows(const pm::Heap& h, PmMatrix& dm, const crypto::Key128& key,
                       std::span<const std::uint64_t> rows);
nn::Batch decrypt_batch(const pm::Heap& h, PmMatrix& dm, const crypto::Key128& key, std::size_t batch_size,
                        SplitMix64& rng);

}  // namespace sealtrain::data
