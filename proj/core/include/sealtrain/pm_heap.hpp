#pragma once

// Emulated byte-addressable persistent memory.
//
// A heap file is memory-mapped and treated as the CPU-visible (volatile)
// view of a persistent region. When crash tracking is enabled, a second
// in-memory copy holds what would have reached the persistence domain:
// stores dirty 64-byte (configurable) lines, flush_range moves dirty lines to
// the flushed set, and fence makes flushed lines durable. crash_image() builds
// a file from the durable copy plus any adversary-chosen subset of the lines
// that are not yet durable, so a test can observe every state a power failure
// could leave behind.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <span>
#include <vector>

namespace sealtrain::pm {

inline constexpr std::array<char, 8> kHeapMagic = {'P', 'L', 'I', 'N', 'I', 'U', 'S', 'H'};
inline constexpr std::uint32_t kHeapVersion = 1;
inline constexpr std::uint64_t kHeaderSize = 4096;
inline constexpr std::uint64_t kMinRegionSize = 4096;
inline constexpr std::size_t kRootSlots = 8;
inline constexpr std::size_t kDefaultLineSize = 64;

/// Byte offsets inside the header page. All integers are little-endian.
namespace header {
inline constexpr std::uint64_t kMagic = 0;
inline constexpr std::uint64_t kVersion = 8;
inline constexpr std::uint64_t kState = 12;
inline constexpr std::uint64_t kRegionSize = 16;
inline constexpr std::uint64_t kMainOffset = 24;
inline constexpr std::uint64_t kBackOffset = 32;
inline constexpr std::uint64_t kAllocHead = 40;
inline constexpr std::uint64_t kRootTable = 48;
// [kAllocHead, kMetaEnd) is transactional and has a twin at kMetaShadow.
inline constexpr std::uint64_t kMetaEnd = kRootTable + 8 * kRootSlots;
inline constexpr std::uint64_t kMetaShadow = 128;
inline constexpr std::uint64_t kMetaSize = kMetaEnd - kAllocHead;
}  // namespace header

enum class StateFlag : std::uint8_t { kIdle = 0, kMutating = 1, kCopying = 2 };

const char* to_string(StateFlag s) noexcept;

/// Decoded header.
struct HeapLayout {
    std::array<char, 8> magic{};
    std::uint32_t version = 0;
    StateFlag state = StateFlag::kIdle;
    std::uint64_t region_size = 0;
    std::uint64_t main_offset = 0;
    std::uint64_t back_offset = 0;
    std::uint64_t alloc_head = 0;
    std::array<std::uint64_t, kRootSlots> roots{};

    bool operator==(const HeapLayout&) const = default;
};

/// A persistent object: offset relative to the start of the main region.
struct PmRef {
    std::uint64_t offset = 0;
    std::uint64_t length = 0;

    [[nodiscard]] std::uint64_t end() const noexcept { return offset + length; }
    bool operator==(const PmRef&) const = default;
};

struct CrashOptions {
    bool track = false;
    std::size_t line_size = kDefaultLineSize;
};

/// Which not-yet-durable lines reach the crash image.
class AdversaryChoice {
public:
    enum class Kind { kNone, kAll, kSeeded, kSubset };

    static AdversaryChoice none() { return AdversaryChoice(Kind::kNone, 0); }
    static AdversaryChoice all() { return AdversaryChoice(Kind::kAll, 0); }
    /// Each candidate line persists independently with probability 1/2.
    static AdversaryChoice seeded(std::uint64_t seed) { return AdversaryChoice(Kind::kSeeded, seed); }
    /// Bit i of `mask` selects the i-th candidate line in ascending order.
    static AdversaryChoice subset(std::uint64_t mask) { return AdversaryChoice(Kind::kSubset, mask); }

    [[nodiscard]] Kind kind() const noexcept { return kind_; }
    [[nodiscard]] std::uint64_t value() const noexcept { return value_; }

private:
    AdversaryChoice(Kind k, std::uint64_t v) : kind_(k), value_(v) {}
    Kind kind_;
    std::uint64_t value_;
};

enum class PmEvent { kStore, kFlush, kFence };

struct PmCounters {
    std::uint64_t stores = 0;
    std::uint64_t flushes = 0;  // flush_range calls
    std::uint64_t fences = 0;
};

/// The mapped heap file plus its crash model. Addresses are file offsets.
/// Single-threaded; move-only.
class PersistentRegion {
public:
    /// Creates a zero-filled heap file of header + 2 * region_size bytes.
    static PersistentRegion create(const std::filesystem::path& path, std::uint64_t region_size,
                                   CrashOptions opts = {});
    /// Maps an existing heap file and validates its header. No recovery.
    static PersistentRegion open(const std::filesystem::path& path, CrashOptions opts = {});

    PersistentRegion(PersistentRegion&& other) noexcept;
    PersistentRegion& operator=(PersistentRegion&& other) noexcept;
    PersistentRegion(const PersistentRegion&) = delete;
    PersistentRegion& operator=(const PersistentRegion&) = delete;
    ~PersistentRegion();

    [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }
    [[nodiscard]] std::uint64_t file_size() const noexcept { return size_; }
    [[nodiscard]] std::uint64_t region_size() const noexcept { return region_size_; }
    [[nodiscard]] std::uint64_t main_offset() const noexcept { return main_offset_; }
    [[nodiscard]] std::uint64_t back_offset() const noexcept { return main_offset_ + region_size_; }

    [[nodiscard]] HeapLayout layout() const;
    [[nodiscard]] StateFlag state() const;
    [[nodiscard]] std::uint64_t read_u64(std::uint64_t file_offset) const;

    /// Volatile view of [file_offset, file_offset + length).
    [[nodiscard]] std::span<const std::byte> view(std::uint64_t file_offset, std::uint64_t length) const;
    [[nodiscard]] std::span<const std::byte> bytes() const noexcept { return {base_, size_}; }

    void store(std::uint64_t file_offset, std::span<const std::byte> data);
    void store_u64(std::uint64_t file_offset, std::uint64_t value);
    void store_state(StateFlag s);
    /// Copies [from, from + length) to [to, to + length) and flushes the target.
    void copy_and_flush(std::uint64_t from, std::uint64_t to, std::uint64_t length);
    void flush(std::uint64_t file_offset, std::uint64_t length);
    void fence();

    [[nodiscard]] const PmCounters& counters() const noexcept { return counters_; }

    // Crash model.
    [[nodiscard]] bool tracking() const noexcept { return opts_.track; }
    [[nodiscard]] std::size_t line_size() const noexcept { return opts_.line_size; }
    [[nodiscard]] const std::set<std::uint64_t>& pending_lines() const noexcept { return pending_; }
    [[nodiscard]] const std::set<std::uint64_t>& flushed_lines() const noexcept { return flushed_; }
    /// pending ∪ flushed, ascending; the lines an adversary may add to an image.
    [[nodiscard]] std::vector<std::uint64_t> candidate_lines() const;
    [[nodiscard]] std::vector<std::byte> durable_image(const AdversaryChoice& choice) const;
    /// Writes durable_image(choice) to `out`. The region itself is untouched.
    void crash_image(const std::filesystem::path& out, const AdversaryChoice& choice) const;

    /// Called after every store, flush and fence. Tests use it to stop a
    /// workload at an arbitrary point (usually by throwing).
    void set_event_hook(std::function<void(PmEvent)> hook) { hook_ = std::move(hook); }

private:
    PersistentRegion(std::filesystem::path path, int fd, std::byte* base, std::uint64_t size, CrashOptions opts);
    void check_range(std::uint64_t file_offset, std::uint64_t length) const;
    void mark_dirty(std::uint64_t file_offset, std::uint64_t length);
    void emit(PmEvent e);
    void release() noexcept;

    std::filesystem::path path_;
    int fd_ = -1;
    std::byte* base_ = nullptr;
    std::uint64_t size_ = 0;
    std::uint64_t region_size_ = 0;
    std::uint64_t main_offset_ = kHeaderSize;
    CrashOptions opts_;
    PmCounters counters_;
    std::vector<std::byte> durable_;
    std::set<std::uint64_t> pending_;
    std::set<std::uint64_t> flushed_;
    std::function<void(PmEvent)> hook_;
};

/// Reads and validates the header of a heap image held in memory.
HeapLayout parse_layout(std::span<const std::byte> image);

}  // namespace sealtrain::pm
