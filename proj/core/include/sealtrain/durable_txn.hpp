#pragma once

// Twin-copy durable transactions over a PersistentRegion.
//
// `main` is mutated in place while `back` holds the last committed state.
// The state flag in the header moves IDLE -> MUTATING -> COPYING -> IDLE and
// a committed transaction issues exactly four fences:
//
//   begin:  state=MUTATING, flush, fence                       (1)
//   commit: fence (interposed flushes of main become durable)  (2)
//           state=COPYING, flush, fence                        (3)
//           copy logged ranges main->back with flushes, fence  (4)
//           state=IDLE, flush (durable at the next fence)
//
// Recovery after a crash in MUTATING copies back->main; in COPYING it copies
// main->back. The range log is volatile and never written to the file, so
// recovery works on whole regions.
//
// The transactional metadata (alloc_head and the root table) lives in the
// header and has its own twin at header::kMetaShadow.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "sealtrain/pm_heap.hpp"

namespace sealtrain::pm {

/// Modified (file offset, length) ranges of the open transaction, coalesced.
class TxnLog {
public:
    struct Entry {
        std::uint64_t offset;
        std::uint64_t length;
        bool operator==(const Entry&) const = default;
    };

    void add(std::uint64_t offset, std::uint64_t length);
    void clear() noexcept { ranges_.clear(); }
    [[nodiscard]] bool empty() const noexcept { return ranges_.empty(); }
    [[nodiscard]] std::size_t size() const noexcept { return ranges_.size(); }
    [[nodiscard]] std::vector<Entry> entries() const;

private:
    std::map<std::uint64_t, std::uint64_t> ranges_;  // offset -> end
};

/// Root-table slots used by this library.
enum class RootSlot : std::size_t { kModel = 0, kDataMatrix = 1, kDataLoad = 2, kSpsArray = 3 };

class Heap {
public:
    /// Fresh heap: state IDLE, alloc_head 0, empty root table, main == back == 0.
    static Heap create(const std::filesystem::path& path, std::uint64_t region_size, CrashOptions opts = {});
    /// Maps an existing heap and runs recover() before returning.
    static Heap open(const std::filesystem::path& path, CrashOptions opts = {});

    void begin();
    /// Writes `data` at `ref.offset + at`. The range must lie inside `ref`.
    void store(const PmRef& ref, std::span<const std::byte> data, std::uint64_t at = 0);
    void store_u64(const PmRef& ref, std::uint64_t at, std::uint64_t value);
    void commit();
    void recover();

    /// Bump allocation, 8-byte aligned. Must run inside a transaction.
    PmRef alloc(std::uint64_t length);

    /// Volatile contents of `ref`.
    [[nodiscard]] std::span<const std::byte> read(const PmRef& ref) const;
    [[nodiscard]] std::uint64_t read_u64(const PmRef& ref, std::uint64_t at) const;

    /// Root slot as a main-relative offset, or nullopt when empty.
    [[nodiscard]] std::optional<std::uint64_t> root(RootSlot slot) const;
    void set_root(RootSlot slot, std::optional<std::uint64_t> main_offset);

    /// Persistent pointer encoding used in the root table and node links:
    /// absolute file offset, 0 for null. Never ambiguous because main starts
    /// after the header page.
    [[nodiscard]] std::uint64_t encode_ptr(std::optional<std::uint64_t> main_offset) const noexcept;
    [[nodiscard]] std::optional<std::uint64_t> decode_ptr(std::uint64_t raw) const;

    [[nodiscard]] std::uint64_t alloc_head() const;
    [[nodiscard]] StateFlag state() const { return region_.state(); }
    [[nodiscard]] bool in_txn() const noexcept { return open_; }
    [[nodiscard]] const TxnLog& log() const noexcept { return log_; }
    [[nodiscard]] std::uint64_t region_size() const noexcept { return region_.region_size(); }

    [[nodiscard]] PersistentRegion& region() noexcept { return region_; }
    [[nodiscard]] const PersistentRegion& region() const noexcept { return region_; }

private:
    explicit Heap(PersistentRegion region) : region_(std::move(region)) {}
    void require_txn(const char* op) const;
    void check_ref(const PmRef& ref) const;
    void txn_store_raw(std::uint64_t file_offset, std::span<const std::byte> data);
    void copy_twins(bool main_to_back_direction);

    PersistentRegion region_;
    TxnLog log_;
    bool open_ = false;
};

/// Free-function spellings of the heap lifecycle.
inline Heap create_heap(const std::filesystem::path& path, std::uint64_t region_size, CrashOptions opts = {}) {
    return Heap::create(path, region_size, opts);
}
inline Heap open_heap(const std::filesystem::path& path, CrashOptions opts = {}) {
    return Heap::open(path, opts);
}

}  // namespace sealtrain::pm
