#include "sealtrain/durable_txn.hpp"

#include <cstring>
#include <string>

#include "sealtrain/error.hpp"

namespace sealtrain::pm {

void TxnLog::add(std::uint64_t offset, std::uint64_t length) {
    if (length == 0) {
        return;
    }
    std::uint64_t begin = offset;
    std::uint64_t end = offset + length;
    // Merge with every range that overlaps or touches [begin, end).
    auto it = ranges_.upper_bound(begin);
    if (it != ranges_.begin()) {
        auto prev = std::prev(it);
        if (prev->second >= begin) {
            it = prev;
        }
    }
    while (it != ranges_.end() && it->first <= end) {
        begin = std::min(begin, it->first);
        end = std::max(end, it->second);
        it = ranges_.erase(it);
    }
    ranges_.emplace(begin, end);
}

std::vector<TxnLog::Entry> TxnLog::entries() const {
    std::vector<Entry> out;
    out.reserve(ranges_.size());
    for (const auto& [b, e] : ranges_) {
        out.push_back({b, e - b});
    }
    return out;
}

Heap Heap::create(const std::filesystem::path& path, std::uint64_t region_size, CrashOptions opts) {
    return Heap(PersistentRegion::create(path, region_size, opts));
}

Heap Heap::open(const std::filesystem::path& path, CrashOptions opts) {
    Heap h(PersistentRegion::open(path, opts));
    h.recover();
    return h;
}

void Heap::require_txn(const char* op) const {
    if (!open_) {
        throw TxnError(std::string(op) + " requires an open transaction");
    }
}

void Heap::check_ref(const PmRef& ref) const {
    if (ref.offset > region_.region_size() || ref.length > region_.region_size() - ref.offset) {
        throw HeapError("reference [" + std::to_string(ref.offset) + ", +" + std::to_string(ref.length) +
                        ") outside main region");
    }
}

void Heap::begin() {
    if (open_) {
        throw TxnError("nested transaction");
    }
    region_.store_state(StateFlag::kMutating);
    region_.flush(header::kState, 1);
    region_.fence();
    open_ = true;
}

void Heap::txn_store_raw(std::uint64_t file_offset, std::span<const std::byte> data) {
    region_.store(file_offset, data);
    log_.add(file_offset, data.size());
    region_.flush(file_offset, data.size());
}

void Heap::store(const PmRef& ref, std::span<const std::byte> data, std::uint64_t at) {
    require_txn("store");
    check_ref(ref);
    if (at > ref.length || data.size() > ref.length - at) {
        throw HeapError("store of " + std::to_string(data.size()) + " bytes at +" + std::to_string(at) +
                        " overruns object of " + std::to_string(ref.length) + " bytes");
    }
    txn_store_raw(region_.main_offset() + ref.offset + at, data);
}

void Heap::store_u64(const PmRef& ref, std::uint64_t at, std::uint64_t value) {
    store(ref, std::as_bytes(std::span{&value, 1}), at);
}

void Heap::commit() {
    require_txn("commit");
    region_.fence();
    region_.store_state(StateFlag::kCopying);
    region_.flush(header::kState, 1);
    region_.fence();
    const auto main = region_.main_offset();
    const auto back = region_.back_offset();
    for (const auto& e : log_.entries()) {
        if (e.offset >= main) {
            region_.copy_and_flush(e.offset, e.offset + (back - main), e.length);
        } else {
            // Header metadata range.
            region_.copy_and_flush(e.offset, e.offset - header::kAllocHead + header::kMetaShadow, e.length);
        }
    }
    region_.fence();
    region_.store_state(StateFlag::kIdle);
    region_.flush(header::kState, 1);
    log_.clear();
    open_ = false;
}

void Heap::copy_twins(bool main_to_back_direction) {
    const auto main = region_.main_offset();
    const auto back = region_.back_offset();
    const auto n = region_.region_size();
    if (main_to_back_direction) {
        region_.copy_and_flush(main, back, n);
        region_.copy_and_flush(header::kAllocHead, header::kMetaShadow, header::kMetaSize);
    } else {
        region_.copy_and_flush(back, main, n);
        region_.copy_and_flush(header::kMetaShadow, header::kAllocHead, header::kMetaSize);
    }
}

void Heap::recover() {
    if (open_) {
        throw TxnError("recover inside a transaction");
    }
    switch (region_.state()) {
        case StateFlag::kIdle:
            return;
        case StateFlag::kMutating:
            copy_twins(false);
            break;
        case StateFlag::kCopying:
            copy_twins(true);
            break;
    }
    region_.fence();
    region_.store_state(StateFlag::kIdle);
    region_.flush(header::kState, 1);
}

PmRef Heap::alloc(std::uint64_t length) {
    require_txn("alloc");
    if (length == 0) {
        throw HeapError("zero-length allocation");
    }
    const auto head = alloc_head();
    const auto padded = (length + 7) & ~std::uint64_t{7};
    if (padded < length || head + padded > region_.region_size()) {
        throw OutOfMemoryError("out of persistent memory: need " + std::to_string(padded) + " bytes, " +
                               std::to_string(region_.region_size() - head) + " free");
    }
    const std::uint64_t next = head + padded;
    txn_store_raw(header::kAllocHead, std::as_bytes(std::span{&next, 1}));
    return {head, length};
}

std::span<const std::byte> Heap::read(const PmRef& ref) const {
    check_ref(ref);
    return region_.view(region_.main_offset() + ref.offset, ref.length);
}

std::uint64_t Heap::read_u64(const PmRef& ref, std::uint64_t at) const {
    if (at > ref.length || ref.length - at < 8) {
        throw HeapError("u64 read outside object");
    }
    check_ref(ref);
    return region_.read_u64(region_.main_offset() + ref.offset + at);
}

std::uint64_t Heap::alloc_head() const { return region_.read_u64(header::kAllocHead); }

std::uint64_t Heap::encode_ptr(std::optional<std::uint64_t> main_offset) const noexcept {
    return main_offset ? region_.main_offset() + *main_offset : 0;
}

std::optional<std::uint64_t> Heap::decode_ptr(std::uint64_t raw) const {
    if (raw == 0) {
        return std::nullopt;
    }
    if (raw < region_.main_offset() || raw >= region_.back_offset()) {
        throw HeapError("persistent pointer " + std::to_string(raw) + " outside main region");
    }
    return raw - region_.main_offset();
}

std::optional<std::uint64_t> Heap::root(RootSlot slot) const {
    return decode_ptr(region_.read_u64(header::kRootTable + 8 * static_cast<std::size_t>(slot)));
}

void Heap::set_root(RootSlot slot, std::optional<std::uint64_t> main_offset) {
    require_txn("set_root");
    const std::uint64_t raw = encode_ptr(main_offset);
    txn_store_raw(header::kRootTable + 8 * static_cast<std::size_t>(slot), std::as_bytes(std::span{&raw, 1}));
}

}  // namespace sealtrain::pm
