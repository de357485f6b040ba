#include "sealtrain/mirror.hpp"

#include <chrono>
#include <cstring>
#include <string>

#include "sealtrain/error.hpp"

namespace sealtrain::mirror {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

namespace field {
inline constexpr std::uint64_t kNumL = 0;
inline constexpr std::uint64_t kIter = 8;
inline constexpr std::uint64_t kRngCursor = 16;
inline constexpr std::uint64_t kHasSnapshot = 24;
inline constexpr std::uint64_t kHead = 32;
}  // namespace field

void store_ref(pm::Heap& h, const pm::PmRef& node, std::uint64_t at, const pm::PmRef& value) {
    h.store_u64(node, at, value.offset);
    h.store_u64(node, at + 8, value.length);
}

pm::PmRef load_ref(const pm::Heap& h, const pm::PmRef& node, std::uint64_t at) {
    return {h.read_u64(node, at), h.read_u64(node, at + 8)};
}

pm::PmRef node_at(const pm::Heap& h, std::uint64_t offset) {
    // Buffer count is the first field; it bounds the node length.
    const auto count = h.read_u64({offset, 8}, 0);
    if (count > nn::kParamBuffers) {
        throw HeapError("corrupt layer node at " + std::to_string(offset));
    }
    return {offset, layer_node_size(count)};
}

void check_shapes(const std::vector<PmLayer>& layers, const nn::Model& m) {
    if (layers.size() != m.numL()) {
        throw ShapeError("persistent model has " + std::to_string(layers.size()) + " layers, volatile model " +
                         std::to_string(m.numL()));
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = m.layers[i];
        if (layers[i].buffers.size() != l.params.size()) {
            throw ShapeError("layer " + std::to_string(i) + ": buffer count mismatch");
        }
        for (std::size_t b = 0; b < l.params.size(); ++b) {
            if (layers[i].buffers[b].plaintext_len != l.params[b].size() * sizeof(float)) {
                throw ShapeError("layer " + std::to_string(i) + " buffer " + std::to_string(b) + ": size mismatch");
            }
        }
    }
}

}  // namespace

PmModel alloc_mirror_model(pm::Heap& h, const nn::Model& m, std::uint64_t rng_cursor) {
    if (h.root(pm::RootSlot::kModel)) {
        throw Error("heap already holds a persistent model");
    }
    h.begin();
    const auto model_node = h.alloc(kModelNodeSize);
    h.store_u64(model_node, field::kNumL, m.numL());
    h.store_u64(model_node, field::kIter, 0);
    h.store_u64(model_node, field::kRngCursor, rng_cursor);
    h.store_u64(model_node, field::kHasSnapshot, 0);

    std::optional<pm::PmRef> prev;
    for (const auto& layer : m.layers) {
        const std::uint64_t count = layer.params.size();
        const auto node = h.alloc(layer_node_size(count));
        h.store_u64(node, 0, count);
        for (std::uint64_t b = 0; b < count; ++b) {
            const std::uint64_t len = layer.params[b].size() * sizeof(float);
            const auto env = h.alloc(len + crypto::kEnvelopeOverhead);
            h.store_u64(node, 8 + 24 * b, len);
            store_ref(h, node, 16 + 24 * b, env);
        }
        h.store_u64(node, 8 + 24 * count, 0);
        if (prev) {
            h.store_u64(*prev, prev->length - 8, h.encode_ptr(node.offset));
        } else {
            store_ref(h, model_node, field::kHead, node);
        }
        prev = node;
    }
    h.set_root(pm::RootSlot::kModel, model_node.offset);
    h.commit();
    return {model_node, m.numL()};
}

std::optional<PmModel> find_mirror(const pm::Heap& h) {
    const auto root = h.root(pm::RootSlot::kModel);
    if (!root) {
        return std::nullopt;
    }
    const pm::PmRef node{*root, kModelNodeSize};
    return PmModel{node, h.read_u64(node, field::kNumL)};
}

bool mirror_exists(const pm::Heap& h) { return h.root(pm::RootSlot::kModel).has_value(); }

std::vector<PmLayer> read_layers(const pm::Heap& h, const PmModel& pm_model) {
    std::vector<PmLayer> out;
    out.reserve(pm_model.numL);
    auto head = load_ref(h, pm_model.node, field::kHead);
    std::optional<std::uint64_t> cur = pm_model.numL == 0 ? std::nullopt : std::optional(head.offset);
    while (cur) {
        if (out.size() >= pm_model.numL) {
            throw HeapError("persistent layer list longer than numL");
        }
        PmLayer l;
        l.node = node_at(h, *cur);
        const auto count = h.read_u64(l.node, 0);
        for (std::uint64_t b = 0; b < count; ++b) {
            l.buffers.push_back({h.read_u64(l.node, 8 + 24 * b), load_ref(h, l.node, 16 + 24 * b)});
            if (l.buffers.back().envelope.length != l.buffers.back().plaintext_len + crypto::kEnvelopeOverhead) {
                throw HeapError("envelope slot size disagrees with plaintext length");
            }
        }
        l.next = h.decode_ptr(h.read_u64(l.node, l.node.length - 8));
        cur = l.next;
        out.push_back(std::move(l));
    }
    if (out.size() != pm_model.numL) {
        throw HeapError("persistent layer list shorter than numL");
    }
    return out;
}

void mirror_out(pm::Heap& h, const PmModel& pm_model, const nn::Model& m, std::uint64_t iter,
                std::uint64_t rng_cursor, const crypto::Key128& key, MirrorTimings* timings) {
    const auto layers = read_layers(h, pm_model);
    check_shapes(layers, m);

    auto t0 = Clock::now();
    std::vector<std::vector<std::byte>> sealed;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        for (std::size_t b = 0; b < layers[i].buffers.size(); ++b) {
            const auto plain = std::as_bytes(std::span<const float>(m.layers[i].params[b]));
            auto& out = sealed.emplace_back(plain.size() + crypto::kEnvelopeOverhead);
            crypto::encrypt_into(key, plain, out);
        }
    }
    if (timings != nullptr) timings->encrypt += seconds_since(t0);

    t0 = Clock::now();
    h.begin();
    h.store_u64(pm_model.node, field::kIter, iter);
    h.store_u64(pm_model.node, field::kRngCursor, rng_cursor);
    h.store_u64(pm_model.node, field::kHasSnapshot, 1);
    std::size_t k = 0;
    for (const auto& l : layers) {
        for (const auto& buf : l.buffers) {
            h.store(buf.envelope, sealed[k++]);
        }
    }
    h.commit();
    if (timings != nullptr) timings->write += seconds_since(t0);
}

MirrorState mirror_in(const pm::Heap& h, const PmModel& pm_model, nn::Model& m, const crypto::Key128& key,
                      MirrorTimings* timings) {
    const auto layers = read_layers(h, pm_model);
    check_shapes(layers, m);
    MirrorState st;
    st.iter = h.read_u64(pm_model.node, field::kIter);
    st.rng_cursor = h.read_u64(pm_model.node, field::kRngCursor);
    if (h.read_u64(pm_model.node, field::kHasSnapshot) == 0) {
        return st;
    }

    auto t0 = Clock::now();
    std::vector<std::vector<std::byte>> stored;
    for (const auto& l : layers) {
        for (const auto& buf : l.buffers) {
            const auto bytes = h.read(buf.envelope);
            stored.emplace_back(bytes.begin(), bytes.end());
        }
    }
    if (timings != nullptr) timings->read += seconds_since(t0);

    t0 = Clock::now();
    // Decrypt into staging first so a failure leaves `m` untouched.
    std::vector<std::vector<float>> staged;
    std::size_t k = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        for (std::size_t b = 0; b < layers[i].buffers.size(); ++b) {
            auto& dst = staged.emplace_back(m.layers[i].params[b].size());
            crypto::decrypt_into(key, stored[k++], std::as_writable_bytes(std::span<float>(dst)));
        }
    }
    k = 0;
    for (auto& l : m.layers) {
        for (auto& p : l.params) {
            p = std::move(staged[k++]);
        }
    }
    m.cached_batch = 0;
    if (timings != nullptr) timings->decrypt += seconds_since(t0);
    st.restored = true;
    return st;
}

std::uint64_t mirror_iter(const pm::Heap& h, const PmModel& pm_model) {
    return h.read_u64(pm_model.node, field::kIter);
}

std::uint64_t envelope_metadata_bytes(const pm::Heap& h, const PmModel& pm_model) {
    std::uint64_t total = 0;
    for (const auto& l : read_layers(h, pm_model)) {
        for (const auto& b : l.buffers) {
            total += b.envelope.length - b.plaintext_len;
        }
    }
    return total;
}

}  // namespace sealtrain::mirror
