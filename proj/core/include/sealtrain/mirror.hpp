#pragma once

// Encrypted persistent replica of a model.
//
// Heap layout (all fields little-endian u64 unless noted):
//
//   model node:  numL | iter | rng_cursor | has_snapshot | head (PmRef, 16 B)
//   layer node:  buffer_count | {plaintext_len, envelope (PmRef, 16 B)} * count | next
//
// `next` is a persistent pointer (absolute file offset, 0 = null). Every
// envelope slot is allocated once, sized plaintext_len + 28, and overwritten
// in place by mirror_out.

#include <cstdint>
#include <optional>
#include <vector>

#include "sealtrain/crypto_envelope.hpp"
#include "sealtrain/durable_txn.hpp"
#include "sealtrain/network.hpp"

namespace sealtrain::mirror {

inline constexpr std::uint64_t kModelNodeSize = 48;

inline constexpr std::uint64_t layer_node_size(std::uint64_t buffer_count) noexcept {
    return 16 + 24 * buffer_count;
}

/// Volatile handle on a persistent model.
struct PmModel {
    pm::PmRef node;
    std::uint64_t numL = 0;
};

struct PmBuffer {
    std::uint64_t plaintext_len = 0;
    pm::PmRef envelope;
};

struct PmLayer {
    pm::PmRef node;
    std::vector<PmBuffer> buffers;
    std::optional<std::uint64_t> next;
};

/// Snapshot metadata restored by mirror_in.
struct MirrorState {
    std::uint64_t iter = 0;
    std::uint64_t rng_cursor = 0;
    /// False when mirror_out never ran; the model is then left untouched.
    bool restored = false;
};

/// Wall-clock split of one mirror operation, seconds.
struct MirrorTimings {
    double encrypt = 0.0;
    double write = 0.0;  // stores + commit
    double read = 0.0;
    double decrypt = 0.0;
};

/// Allocates the node list and envelope slots for `m` in one transaction and
/// points root slot 0 at it. iter starts at 0.
PmModel alloc_mirror_model(pm::Heap& h, const nn::Model& m, std::uint64_t rng_cursor = 0);

bool mirror_exists(const pm::Heap& h);
std::optional<PmModel> find_mirror(const pm::Heap& h);

/// Encrypts every parameter buffer with a fresh IV and stores it, together
/// with iter and rng_cursor, in a single transaction.
void mirror_out(pm::Heap& h, const PmModel& pm_model, const nn::Model& m, std::uint64_t iter,
                std::uint64_t rng_cursor, const crypto::Key128& key, MirrorTimings* timings = nullptr);

/// Decrypts every parameter buffer into `m`. Throws IntegrityError on any
/// tampered envelope and ShapeError if `m` does not match the stored shapes;
/// `m` is only modified once every envelope has verified.
MirrorState mirror_in(const pm::Heap& h, const PmModel& pm_model, nn::Model& m, const crypto::Key128& key,
                      MirrorTimings* timings = nullptr);

std::uint64_t mirror_iter(const pm::Heap& h, const PmModel& pm_model);
std::vector<PmLayer> read_layers(const pm::Heap& h, const PmModel& pm_model);

/// Sum over all envelopes of (stored size - plaintext size).
std::uint64_t envelope_metadata_bytes(const pm::Heap& h, const PmModel& pm_model);

}  // namespace sealtrain::mirror
