#include "sealtrain/pm_heap.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <string>

#include "sealtrain/error.hpp"
#include "sealtrain/rng.hpp"

static_assert(std::endian::native == std::endian::little, "heap files are little-endian");

namespace sealtrain::pm {

namespace {

std::string errno_text(const std::string& what, const std::filesystem::path& p) {
    return what + " " + p.string() + ": " + std::strerror(errno);
}

template <typename T>
T load(std::span<const std::byte> image, std::uint64_t off) {
    T v;
    std::memcpy(&v, image.data() + off, sizeof(T));
    return v;
}

std::byte* map_file(int fd, std::uint64_t size, const std::filesystem::path& path) {
    void* p = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
    if (p == MAP_FAILED) {
        throw HeapError(errno_text("mmap", path));
    }
    return static_cast<std::byte*>(p);
}

}  // namespace

const char* to_string(StateFlag s) noexcept {
    switch (s) {
        case StateFlag::kIdle: return "IDLE";
        case StateFlag::kMutating: return "MUTATING";
        case StateFlag::kCopying: return "COPYING";
    }
    return "INVALID";
}

HeapLayout parse_layout(std::span<const std::byte> image) {
    if (image.size() < kHeaderSize) {
        throw HeapError("heap image truncated: " + std::to_string(image.size()) + " bytes");
    }
    HeapLayout l;
    std::memcpy(l.magic.data(), image.data() + header::kMagic, l.magic.size());
    if (l.magic != kHeapMagic) {
        throw HeapError("bad heap magic");
    }
    l.version = load<std::uint32_t>(image, header::kVersion);
    if (l.version != kHeapVersion) {
        throw HeapError("unsupported heap version " + std::to_string(l.version));
    }
    const auto raw_state = load<std::uint8_t>(image, header::kState);
    if (raw_state > static_cast<std::uint8_t>(StateFlag::kCopying)) {
        throw HeapError("corrupt state flag " + std::to_string(raw_state));
    }
    l.state = static_cast<StateFlag>(raw_state);
    l.region_size = load<std::uint64_t>(image, header::kRegionSize);
    l.main_offset = load<std::uint64_t>(image, header::kMainOffset);
    l.back_offset = load<std::uint64_t>(image, header::kBackOffset);
    l.alloc_head = load<std::uint64_t>(image, header::kAllocHead);
    for (std::size_t i = 0; i < kRootSlots; ++i) {
        l.roots[i] = load<std::uint64_t>(image, header::kRootTable + 8 * i);
    }

    if (l.region_size < kMinRegionSize || l.main_offset < kHeaderSize || l.main_offset % 4096 != 0 ||
        l.back_offset != l.main_offset + l.region_size) {
        throw HeapError("inconsistent heap geometry");
    }
    if (image.size() < l.back_offset + l.region_size) {
        throw HeapError("heap image truncated: expected " + std::to_string(l.back_offset + l.region_size) +
                        " bytes, found " + std::to_string(image.size()));
    }
    if (l.alloc_head > l.region_size) {
        throw HeapError("alloc_head beyond region");
    }
    return l;
}

PersistentRegion::PersistentRegion(std::filesystem::path path, int fd, std::byte* base, std::uint64_t size,
                                   CrashOptions opts)
    : path_(std::move(path)), fd_(fd), base_(base), size_(size), opts_(opts) {
    if (opts_.line_size == 0 || (opts_.line_size & (opts_.line_size - 1)) != 0) {
        release();
        throw HeapError("cache line size must be a power of two");
    }
    if (opts_.track) {
        // Everything on the file at map time is durable.
        durable_.assign(base_, base_ + size_);
    }
}

PersistentRegion PersistentRegion::create(const std::filesystem::path& path, std::uint64_t region_size,
                                          CrashOptions opts) {
    if (region_size < kMinRegionSize) {
        throw HeapError("region_size must be at least 4 KiB");
    }
    region_size = (region_size + 7) & ~std::uint64_t{7};
    std::error_code ec;
    if (std::filesystem::exists(path, ec) && std::filesystem::file_size(path, ec) > 0) {
        throw HeapError("refusing to overwrite non-empty file " + path.string());
    }
    const int fd = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd < 0) {
        throw HeapError(errno_text("open", path));
    }
    const std::uint64_t size = kHeaderSize + 2 * region_size;
    if (::ftruncate(fd, static_cast<off_t>(size)) != 0) {
        const auto msg = errno_text("ftruncate", path);
        ::close(fd);
        throw HeapError(msg);
    }
    // ftruncate leaves holes; write zeros so the file is fully allocated.
    {
        std::vector<char> zeros(1 << 20, 0);
        std::uint64_t done = 0;
        while (done < size) {
            const auto chunk = std::min<std::uint64_t>(zeros.size(), size - done);
            const auto n = ::pwrite(fd, zeros.data(), chunk, static_cast<off_t>(done));
            if (n <= 0) {
                const auto msg = errno_text("pwrite", path);
                ::close(fd);
                throw HeapError(msg);
            }
            done += static_cast<std::uint64_t>(n);
        }
    }
    std::byte* base = nullptr;
    try {
        base = map_file(fd, size, path);
    } catch (...) {
        ::close(fd);
        throw;
    }

    auto put = [&](std::uint64_t off, const void* src, std::size_t n) { std::memcpy(base + off, src, n); };
    put(header::kMagic, kHeapMagic.data(), kHeapMagic.size());
    put(header::kVersion, &kHeapVersion, sizeof kHeapVersion);
    const std::uint64_t main_off = kHeaderSize;
    const std::uint64_t back_off = kHeaderSize + region_size;
    put(header::kRegionSize, &region_size, 8);
    put(header::kMainOffset, &main_off, 8);
    put(header::kBackOffset, &back_off, 8);
    if (::msync(base, kHeaderSize, MS_SYNC) != 0) {
        const auto msg = errno_text("msync", path);
        ::munmap(base, size);
        ::close(fd);
        throw HeapError(msg);
    }

    PersistentRegion r(path, fd, base, size, opts);
    r.region_size_ = region_size;
    r.main_offset_ = main_off;
    return r;
}

PersistentRegion PersistentRegion::open(const std::filesystem::path& path, CrashOptions opts) {
    const int fd = ::open(path.c_str(), O_RDWR);
    if (fd < 0) {
        throw HeapError(errno_text("open", path));
    }
    struct stat st {};
    if (::fstat(fd, &st) != 0) {
        const auto msg = errno_text("fstat", path);
        ::close(fd);
        throw HeapError(msg);
    }
    const auto size = static_cast<std::uint64_t>(st.st_size);
    if (size < kHeaderSize) {
        ::close(fd);
        throw HeapError("heap file truncated: " + path.string());
    }
    std::byte* base = nullptr;
    try {
        base = map_file(fd, size, path);
    } catch (...) {
        ::close(fd);
        throw;
    }
    HeapLayout l;
    try {
        l = parse_layout({base, size});
    } catch (...) {
        ::munmap(base, size);
        ::close(fd);
        throw;
    }
    PersistentRegion r(path, fd, base, size, opts);
    r.region_size_ = l.region_size;
    r.main_offset_ = l.main_offset;
    return r;
}

PersistentRegion::PersistentRegion(PersistentRegion&& other) noexcept
    : path_(std::move(other.path_)),
      fd_(std::exchange(other.fd_, -1)),
      base_(std::exchange(other.base_, nullptr)),
      size_(std::exchange(other.size_, 0)),
      region_size_(other.region_size_),
      main_offset_(other.main_offset_),
      opts_(other.opts_),
      counters_(other.counters_),
      durable_(std::move(other.durable_)),
      pending_(std::move(other.pending_)),
      flushed_(std::move(other.flushed_)),
      hook_(std::move(other.hook_)) {}

PersistentRegion& PersistentRegion::operator=(PersistentRegion&& other) noexcept {
    if (this != &other) {
        release();
        path_ = std::move(other.path_);
        fd_ = std::exchange(other.fd_, -1);
        base_ = std::exchange(other.base_, nullptr);
        size_ = std::exchange(other.size_, 0);
        region_size_ = other.region_size_;
        main_offset_ = other.main_offset_;
        opts_ = other.opts_;
        counters_ = other.counters_;
        durable_ = std::move(other.durable_);
        pending_ = std::move(other.pending_);
        flushed_ = std::move(other.flushed_);
        hook_ = std::move(other.hook_);
    }
    return *this;
}

PersistentRegion::~PersistentRegion() { release(); }

void PersistentRegion::release() noexcept {
    if (base_ != nullptr) {
        ::munmap(base_, size_);
        base_ = nullptr;
    }
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

HeapLayout PersistentRegion::layout() const { return parse_layout(bytes()); }

StateFlag PersistentRegion::state() const {
    const auto raw = static_cast<std::uint8_t>(base_[header::kState]);
    if (raw > static_cast<std::uint8_t>(StateFlag::kCopying)) {
        throw HeapError("corrupt state flag " + std::to_string(raw));
    }
    return static_cast<StateFlag>(raw);
}

std::uint64_t PersistentRegion::read_u64(std::uint64_t file_offset) const {
    check_range(file_offset, 8);
    return load<std::uint64_t>(bytes(), file_offset);
}

std::span<const std::byte> PersistentRegion::view(std::uint64_t file_offset, std::uint64_t length) const {
    check_range(file_offset, length);
    return {base_ + file_offset, length};
}

void PersistentRegion::check_range(std::uint64_t file_offset, std::uint64_t length) const {
    if (file_offset > size_ || length > size_ - file_offset) {
        throw HeapError("access [" + std::to_string(file_offset) + ", +" + std::to_string(length) +
                        ") outside heap of " + std::to_string(size_) + " bytes");
    }
}

void PersistentRegion::mark_dirty(std::uint64_t file_offset, std::uint64_t length) {
    if (!opts_.track || length == 0) {
        return;
    }
    const auto first = file_offset / opts_.line_size;
    const auto last = (file_offset + length - 1) / opts_.line_size;
    for (auto line = first; line <= last; ++line) {
        flushed_.erase(line);
        pending_.insert(line);
    }
}

void PersistentRegion::emit(PmEvent e) {
    if (hook_) {
        hook_(e);
    }
}

void PersistentRegion::store(std::uint64_t file_offset, std::span<const std::byte> data) {
    check_range(file_offset, data.size());
    if (!data.empty()) {
        std::memmove(base_ + file_offset, data.data(), data.size());
    }
    mark_dirty(file_offset, data.size());
    ++counters_.stores;
    emit(PmEvent::kStore);
}

void PersistentRegion::store_u64(std::uint64_t file_offset, std::uint64_t value) {
    store(file_offset, std::as_bytes(std::span{&value, 1}));
}

void PersistentRegion::store_state(StateFlag s) {
    const auto raw = static_cast<std::byte>(s);
    store(header::kState, {&raw, 1});
}

void PersistentRegion::copy_and_flush(std::uint64_t from, std::uint64_t to, std::uint64_t length) {
    check_range(from, length);
    store(to, {base_ + from, length});
    flush(to, length);
}

void PersistentRegion::flush(std::uint64_t file_offset, std::uint64_t length) {
    check_range(file_offset, length);
    ++counters_.flushes;
    if (opts_.track && length > 0) {
        const auto first = file_offset / opts_.line_size;
        const auto last = (file_offset + length - 1) / opts_.line_size;
        for (auto it = pending_.lower_bound(first); it != pending_.end() && *it <= last;) {
            flushed_.insert(*it);
            it = pending_.erase(it);
        }
    }
    emit(PmEvent::kFlush);
}

void PersistentRegion::fence() {
    ++counters_.fences;
    if (opts_.track) {
        for (const auto line : flushed_) {
            const auto off = line * opts_.line_size;
            const auto n = std::min<std::uint64_t>(opts_.line_size, size_ - off);
            std::memcpy(durable_.data() + off, base_ + off, n);
        }
        flushed_.clear();
    }
    emit(PmEvent::kFence);
}

std::vector<std::uint64_t> PersistentRegion::candidate_lines() const {
    std::vector<std::uint64_t> out;
    out.reserve(pending_.size() + flushed_.size());
    std::set_union(pending_.begin(), pending_.end(), flushed_.begin(), flushed_.end(), std::back_inserter(out));
    return out;
}

std::vector<std::byte> PersistentRegion::durable_image(const AdversaryChoice& choice) const {
    if (!opts_.track) {
        // Without a crash model the only knowable state is the volatile view.
        return {base_, base_ + size_};
    }
    std::vector<std::byte> image = durable_;
    const auto lines = candidate_lines();
    SplitMix64 rng(choice.value());
    for (std::size_t i = 0; i < lines.size(); ++i) {
        bool take = false;
        switch (choice.kind()) {
            case AdversaryChoice::Kind::kNone: take = false; break;
            case AdversaryChoice::Kind::kAll: take = true; break;
            case AdversaryChoice::Kind::kSeeded: take = (rng.next() & 1) != 0; break;
            case AdversaryChoice::Kind::kSubset: take = i < 64 && ((choice.value() >> i) & 1) != 0; break;
        }
        if (take) {
            const auto off = lines[i] * opts_.line_size;
            const auto n = std::min<std::uint64_t>(opts_.line_size, size_ - off);
            std::memcpy(image.data() + off, base_ + off, n);
        }
    }
    return image;
}

void PersistentRegion::crash_image(const std::filesystem::path& out, const AdversaryChoice& choice) const {
    const auto image = durable_image(choice);
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(image.data()), static_cast<std::streamsize>(image.size()));
    if (!f) {
        throw HeapError("cannot write crash image " + out.string());
    }
}

}  // namespace sealtrain::pm
