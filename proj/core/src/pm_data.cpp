#include "sealtrain/pm_data.hpp"

#include <algorithm>
#include <string>

#include "sealtrain/error.hpp"

namespace sealtrain::data {

namespace {

namespace field {
inline constexpr std::uint64_t kRows = 0;
inline constexpr std::uint64_t kCols = 8;
inline constexpr std::uint64_t kClasses = 16;
inline constexpr std::uint64_t kLoaded = 24;
inline constexpr std::uint64_t kTable = 32;
}  // namespace field

std::uint64_t pad8(std::uint64_t n) { return (n + 7) & ~std::uint64_t{7}; }

PmMatrix read_node(const pm::Heap& h, std::uint64_t offset) {
    PmMatrix m;
    m.node = {offset, kMatrixNodeSize};
    m.rows = h.read_u64(m.node, field::kRows);
    m.cols = h.read_u64(m.node, field::kCols);
    m.classes = h.read_u64(m.node, field::kClasses);
    m.row_table = {h.read_u64(m.node, field::kTable), h.read_u64(m.node, field::kTable + 8)};
    if (m.row_table.length != 16 * m.rows) {
        throw HeapError("corrupt matrix node");
    }
    return m;
}

pm::PmRef row_ref(const pm::Heap& h, const PmMatrix& m, std::uint64_t row) {
    return {h.read_u64(m.row_table, 16 * row), h.read_u64(m.row_table, 16 * row + 8)};
}

}  // namespace

std::uint64_t required_region_bytes(std::uint64_t rows, std::uint64_t cols, std::uint64_t classes) {
    const auto need = kMatrixNodeSize + pad8(16 * rows) + rows * pad8(4 * (cols + classes) + crypto::kEnvelopeOverhead);
    return std::max(need, pm::kMinRegionSize);
}

PmMatrix load_dataset_to_pm(pm::Heap& h, const Dataset& d, const crypto::Key128& key, const LoadOptions& opts) {
    if (pm_data_exists(h)) {
        throw Error("heap already holds a training matrix");
    }
    if (d.rows == 0) {
        throw ParseError("dataset is empty");
    }
    const std::size_t step = std::max<std::size_t>(opts.batch_rows, 1);

    std::optional<PmMatrix> m;
    std::uint64_t loaded = 0;
    if (const auto pending = h.root(pm::RootSlot::kDataLoad)) {
        auto p = read_node(h, *pending);
        // Resume only a load of the same shape; otherwise the partial rows are abandoned.
        if (p.rows == d.rows && p.cols == d.cols && p.classes == d.classes) {
            loaded = h.read_u64(p.node, field::kLoaded);
            m = p;
        }
    }
    if (!m) {
        h.begin();
        PmMatrix fresh;
        fresh.node = h.alloc(kMatrixNodeSize);
        fresh.rows = d.rows;
        fresh.cols = d.cols;
        fresh.classes = d.classes;
        fresh.row_table = h.alloc(16 * d.rows);
        h.store_u64(fresh.node, field::kRows, d.rows);
        h.store_u64(fresh.node, field::kCols, d.cols);
        h.store_u64(fresh.node, field::kClasses, d.classes);
        h.store_u64(fresh.node, field::kLoaded, 0);
        h.store_u64(fresh.node, field::kTable, fresh.row_table.offset);
        h.store_u64(fresh.node, field::kTable + 8, fresh.row_table.length);
        h.set_root(pm::RootSlot::kDataLoad, fresh.node.offset);
        h.commit();
        m = fresh;
    }

    const std::uint64_t plain_len = m->row_plaintext_bytes();
    std::vector<std::byte> sealed(plain_len + crypto::kEnvelopeOverhead);
    while (loaded < d.rows) {
        const std::uint64_t end = std::min<std::uint64_t>(loaded + step, d.rows);
        h.begin();
        for (std::uint64_t r = loaded; r < end; ++r) {
            const auto row = normalized_row(d, r);
            crypto::encrypt_into(key, std::as_bytes(std::span<const float>(row)), sealed);
            const auto env = h.alloc(sealed.size());
            h.store(env, sealed);
            h.store_u64(m->row_table, 16 * r, env.offset);
            h.store_u64(m->row_table, 16 * r + 8, env.length);
        }
        h.store_u64(m->node, field::kLoaded, end);
        if (end == d.rows) {
            h.set_root(pm::RootSlot::kDataLoad, std::nullopt);
            h.set_root(pm::RootSlot::kDataMatrix, m->node.offset);
        }
        h.commit();
        loaded = end;
        if (opts.progress) opts.progress(loaded);
    }
    return *m;
}

PmMatrix load_dataset_to_pm(pm::Heap& h, const DatasetSource& src, const crypto::Key128& key,
                            const LoadOptions& opts) {
    return load_dataset_to_pm(h, load_dataset(src), key, opts);
}

bool pm_data_exists(const pm::Heap& h) { return h.root(pm::RootSlot::kDataMatrix).has_value(); }

std::optional<PmMatrix> find_matrix(const pm::Heap& h) {
    const auto root = h.root(pm::RootSlot::kDataMatrix);
    if (!root) {
        return std::nullopt;
    }
    return read_node(h, *root);
}

std::optional<std::uint64_t> pending_load_rows(const pm::Heap& h) {
    const auto root = h.root(pm::RootSlot::kDataLoad);
    if (!root) {
        return std::nullopt;
    }
    return h.read_u64({*root, kMatrixNodeSize}, field::kLoaded);
}

std::vector<std::uint64_t> sample_rows(std::uint64_t rows, std::size_t count, SplitMix64& rng) {
    std::vector<std::uint64_t> out(count);
    for (auto& r : out) {
        r = rng.below(rows);
    }
    return out;
}

nn::Batch decrypt_rows(const pm::Heap& h, PmMatrix& dm, const crypto::Key128& key,
                       std::span<const std::uint64_t> rows) {
    nn::Batch b;
    b.size = rows.size();
    b.input_dim = dm.cols;
    b.classes = dm.classes;
    b.inputs.resize(b.size * dm.cols);
    b.labels.resize(b.size * dm.classes);
    std::vector<float> plain(dm.cols + dm.classes);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= dm.rows) {
            throw ShapeError("row " + std::to_string(rows[i]) + " out of range");
        }
        const auto ref = row_ref(h, dm, rows[i]);
        if (ref.length != dm.row_plaintext_bytes() + crypto::kEnvelopeOverhead) {
            throw HeapError("row envelope has wrong size");
        }
        ++dm.envelope_reads;
        crypto::decrypt_into(key, h.read(ref), std::as_writable_bytes(std::span<float>(plain)));
        std::copy_n(plain.begin(), dm.cols, b.inputs.begin() + static_cast<std::ptrdiff_t>(i * dm.cols));
        std::copy_n(plain.begin() + static_cast<std::ptrdiff_t>(dm.cols), dm.classes,
                    b.labels.begin() + static_cast<std::ptrdiff_t>(i * dm.classes));
    }
    return b;
}

nn::Batch decrypt_batch(const pm::Heap& h, PmMatrix& dm, const crypto::Key128& key, std::size_t batch_size,
                        SplitMix64& rng) {
    if (batch_size == 0 || batch_size > dm.rows) {
        throw ShapeError("batch size must be in 1..rows");
    }
    const auto idx = sample_rows(dm.rows, batch_size, rng);
    return decrypt_rows(h, dm, key, idx);
}

}  // namespace sealtrain::data
