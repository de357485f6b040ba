#include "sealtrain/bench.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "sealtrain/error.hpp"
#include "sealtrain/mirror.hpp"
#include "sealtrain/network.hpp"
#include "sealtrain/pm_data.hpp"

namespace sealtrain::harness {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::uint64_t pad8(std::uint64_t n) { return (n + 7) & ~std::uint64_t{7}; }

}  // namespace

void BenchReport::append(const BenchReport& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
}

void BenchReport::write_csv(std::ostream& os, bool header) const {
    if (header) os << kCsvHeader << '\n';
    char value[64];
    for (const auto& r : rows) {
        std::snprintf(value, sizeof value, "%.9g", r.value);
        os << r.experiment << ',' << r.model_size_bytes << ',' << r.phase << ',' << value << ',' << r.unit << ','
           << r.seed << '\n';
    }
}

void BenchReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw Error("cannot write " + path.string());
    }
    write_csv(f);
}

std::vector<CsvRow> BenchReport::select(const std::string& experiment) const {
    std::vector<CsvRow> out;
    std::copy_if(rows.begin(), rows.end(), std::back_inserter(out),
                 [&](const CsvRow& r) { return r.experiment == experiment; });
    return out;
}

// ---- SPS ----

SpsArray sps_init(pm::Heap& h, std::uint64_t len) {
    if (len == 0) {
        throw Error("SPS array must not be empty");
    }
    std::vector<std::uint64_t> init(len);
    std::iota(init.begin(), init.end(), std::uint64_t{0});
    h.begin();
    // Length word, then the values.
    const auto node = h.alloc(8 + 8 * len);
    h.store_u64(node, 0, len);
    SpsArray a{{node.offset + 8, 8 * len}, len};
    h.store(a.ref, std::as_bytes(std::span<const std::uint64_t>(init)));
    h.set_root(pm::RootSlot::kSpsArray, node.offset);
    h.commit();
    return a;
}

std::optional<SpsArray> sps_find(const pm::Heap& h) {
    const auto root = h.root(pm::RootSlot::kSpsArray);
    if (!root) return std::nullopt;
    const auto len = h.read_u64({*root, 8}, 0);
    return SpsArray{{*root + 8, 8 * len}, len};
}

void sps_txn(pm::Heap& h, const SpsArray& a, std::size_t swaps, SplitMix64& rng) {
    h.begin();
    for (std::size_t s = 0; s < swaps; ++s) {
        const auto i = rng.below(a.len);
        const auto j = rng.below(a.len);
        const auto vi = h.read_u64(a.ref, 8 * i);
        const auto vj = h.read_u64(a.ref, 8 * j);
        h.store_u64(a.ref, 8 * i, vj);
        h.store_u64(a.ref, 8 * j, vi);
    }
    h.commit();
}

std::vector<std::uint64_t> sps_values(const pm::Heap& h, const SpsArray& a) {
    std::vector<std::uint64_t> v(a.len);
    const auto bytes = h.read(a.ref);
    std::memcpy(v.data(), bytes.data(), bytes.size());
    return v;
}

bool sps_is_permutation(const pm::Heap& h, const SpsArray& a) {
    auto v = sps_values(h, a);
    std::sort(v.begin(), v.end());
    for (std::uint64_t i = 0; i < a.len; ++i) {
        if (v[i] != i) return false;
    }
    return true;
}

BenchReport bench_sps(pm::Heap& h, const SpsOptions& opts) {
    auto a = sps_find(h);
    if (!a) a = sps_init(h, opts.array_len);
    SplitMix64 rng(opts.seed);
    BenchReport rep;
    const std::uint64_t bytes = 8 * a->len;
    for (const auto size : opts.txn_sizes) {
        const auto& c = h.region().counters();
        std::uint64_t txns = 0;
        std::uint64_t fences = 0;
        std::uint64_t min_f = UINT64_MAX;
        std::uint64_t max_f = 0;
        const auto t0 = Clock::now();
        double elapsed = 0.0;
        do {
            const auto before = c.fences;
            sps_txn(h, *a, size, rng);
            const auto f = c.fences - before;
            fences += f;
            min_f = std::min(min_f, f);
            max_f = std::max(max_f, f);
            ++txns;
            elapsed = since(t0);
        } while (elapsed < opts.seconds);
        const std::string phase = "swaps_per_txn=" + std::to_string(size);
        rep.add({"sps", bytes, phase, static_cast<double>(txns * size) / elapsed, "swaps/s", opts.seed});
        rep.add({"sps_txns", bytes, phase, static_cast<double>(txns), "txns", opts.seed});
        rep.add({"sps_fences", bytes, phase, static_cast<double>(fences) / static_cast<double>(txns),
                 "fences/txn", opts.seed});
        rep.add({"sps_fences_min", bytes, phase, static_cast<double>(min_f), "fences/txn", opts.seed});
        rep.add({"sps_fences_max", bytes, phase, static_cast<double>(max_f), "fences/txn", opts.seed});
    }
    if (!sps_is_permutation(h, *a)) {
        throw HeapError("SPS array is no longer a permutation");
    }
    return rep;
}

SpsCampaignResult sps_crash_campaign(const SpsCampaignOptions& opts) {
    std::filesystem::create_directories(opts.work_dir);
    const auto heap_path = opts.work_dir / "sps.pm";
    const auto image_path = opts.work_dir / "sps-crash.pm";
    std::filesystem::remove(heap_path);

    pm::CrashOptions co{true, opts.line_size};
    auto h = pm::Heap::create(heap_path, pad8(8 * opts.array_len) + 4096, co);
    const auto a = sps_init(h, opts.array_len);
    SplitMix64 rng(opts.seed);
    SplitMix64 chaos(opts.seed ^ 0xc4a5c4a5c4a5c4a5ULL);

    SpsCampaignResult res;
    while (res.injections < opts.injections) {
        const std::size_t swaps = 1 + chaos.below(opts.max_swaps);
        // A txn of s swaps emits 4s stores, 4s flushes and a fixed protocol
        // tail; aim anywhere in that span, occasionally past its end.
        const std::uint64_t span = 8 * swaps + 16;
        const std::uint64_t target = 1 + chaos.below(span);
        const std::uint64_t adversary = chaos.next();
        std::uint64_t events = 0;
        bool taken = false;
        bool mid_txn = false;
        h.region().set_event_hook([&](pm::PmEvent) {
            if (++events == target && !taken) {
                h.region().crash_image(image_path, pm::AdversaryChoice::seeded(adversary));
                taken = true;
                mid_txn = h.in_txn();
            }
        });
        sps_txn(h, a, swaps, rng);
        h.region().set_event_hook(nullptr);
        if (!taken) continue;

        ++res.injections;
        res.mid_txn += mid_txn ? 1 : 0;
        auto recovered = pm::Heap::open(image_path);
        const auto ra = sps_find(recovered);
        if (ra && ra->len == a.len && sps_is_permutation(recovered, *ra)) {
            ++res.permutations;
        }
    }
    std::filesystem::remove(image_path);
    return res;
}

// ---- Mirror vs. checkpoint ----

nn::NetConfig conv_stack_config(std::size_t layers, int filters) {
    nn::NetConfig cfg;
    cfg.batch = 1;
    for (std::size_t i = 0; i < layers; ++i) {
        cfg.layers.emplace_back(nn::ConvSpec{filters, 3, 1, 1, nn::Activation::kLeaky});
    }
    cfg.layers.emplace_back(nn::SoftmaxSpec{});
    return cfg;
}

void checkpoint_save(const std::filesystem::path& path, const nn::Model& m, const crypto::Key128& key,
                     CheckpointTimings* t) {
    auto t0 = Clock::now();
    std::vector<std::byte> blob;
    for (const auto& l : m.layers) {
        for (const auto& p : l.params) {
            const auto plain = std::as_bytes(std::span<const float>(p));
            const std::uint64_t len = plain.size();
            const auto at = blob.size();
            blob.resize(at + 8 + len + crypto::kEnvelopeOverhead);
            std::memcpy(blob.data() + at, &len, 8);
            crypto::encrypt_into(key, plain, std::span(blob).subspan(at + 8, len + crypto::kEnvelopeOverhead));
        }
    }
    if (t != nullptr) t->encrypt += since(t0);

    t0 = Clock::now();
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) {
        throw Error("cannot write checkpoint " + path.string());
    }
    const bool ok = std::fwrite(blob.data(), 1, blob.size(), f) == blob.size() && std::fflush(f) == 0 &&
                    ::fsync(::fileno(f)) == 0;
    std::fclose(f);
    if (!ok) {
        throw Error("checkpoint write failed");
    }
    if (t != nullptr) t->write += since(t0);
}

void checkpoint_load(const std::filesystem::path& path, nn::Model& m, const crypto::Key128& key,
                     CheckpointTimings* t) {
    auto t0 = Clock::now();
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw Error("cannot read checkpoint " + path.string());
    }
    std::vector<char> raw{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
    if (t != nullptr) t->read += since(t0);

    t0 = Clock::now();
    const auto blob = std::as_bytes(std::span<const char>(raw));
    std::size_t at = 0;
    for (auto& l : m.layers) {
        for (auto& p : l.params) {
            std::uint64_t len = 0;
            if (at + 8 > blob.size()) throw ShapeError("checkpoint truncated");
            std::memcpy(&len, blob.data() + at, 8);
            if (len != p.size() * sizeof(float) || at + 8 + len + crypto::kEnvelopeOverhead > blob.size()) {
                throw ShapeError("checkpoint does not match model");
            }
            crypto::decrypt_into(key, blob.subspan(at + 8, len + crypto::kEnvelopeOverhead),
                                 std::as_writable_bytes(std::span<float>(p)));
            at += 8 + len + crypto::kEnvelopeOverhead;
        }
    }
    if (t != nullptr) t->decrypt += since(t0);
}

BenchReport bench_mirror(const crypto::Key128& key, const MirrorBenchOptions& opts) {
    std::filesystem::create_directories(opts.work_dir);
    BenchReport rep;
    const double reps = static_cast<double>(std::max<std::size_t>(opts.repetitions, 1));
    for (const auto n : opts.layer_counts) {
        const auto cfg = conv_stack_config(n, opts.filters);
        const auto model = nn::build_model<float>(cfg, opts.seed + n);
        const std::uint64_t size = model.parameter_bytes();

        const auto heap_path = opts.work_dir / ("mirror-" + std::to_string(n) + ".pm");
        const auto ckpt_path = opts.work_dir / ("ckpt-" + std::to_string(n) + ".bin");
        std::filesystem::remove(heap_path);
        std::uint64_t region = 4096 + 2 * mirror::kModelNodeSize;
        for (const auto& l : model.layers) {
            region += pad8(mirror::layer_node_size(l.params.size()));
            for (const auto& p : l.params) region += pad8(p.size() * sizeof(float) + crypto::kEnvelopeOverhead);
        }
        auto h = pm::Heap::create(heap_path, region);
        const auto pm_model = mirror::alloc_mirror_model(h, model);

        mirror::MirrorTimings mt;
        CheckpointTimings ct;
        double out_total = 0, in_total = 0, save_total = 0, load_total = 0;
        auto restored = model;
        auto from_file = model;
        for (std::size_t r = 0; r < opts.repetitions; ++r) {
            auto t0 = Clock::now();
            mirror::mirror_out(h, pm_model, model, r + 1, 0, key, &mt);
            out_total += since(t0);
            t0 = Clock::now();
            mirror::mirror_in(h, pm_model, restored, key, &mt);
            in_total += since(t0);
            t0 = Clock::now();
            checkpoint_save(ckpt_path, model, key, &ct);
            save_total += since(t0);
            t0 = Clock::now();
            checkpoint_load(ckpt_path, from_file, key, &ct);
            load_total += since(t0);
        }
        for (std::size_t i = 0; i < model.layers.size(); ++i) {
            if (restored.layers[i].params != model.layers[i].params ||
                from_file.layers[i].params != model.layers[i].params) {
                throw Error("mirror and checkpoint disagree with the source model");
            }
        }
        const auto s = opts.seed;
        rep.add({"mirror_out", size, "encrypt", mt.encrypt / reps, "s", s});
        rep.add({"mirror_out", size, "write", mt.write / reps, "s", s});
        rep.add({"mirror_out", size, "total", out_total / reps, "s", s});
        rep.add({"mirror_in", size, "read", mt.read / reps, "s", s});
        rep.add({"mirror_in", size, "decrypt", mt.decrypt / reps, "s", s});
        rep.add({"mirror_in", size, "total", in_total / reps, "s", s});
        rep.add({"ckpt_save", size, "encrypt", ct.encrypt / reps, "s", s});
        rep.add({"ckpt_save", size, "write", ct.write / reps, "s", s});
        rep.add({"ckpt_save", size, "total", save_total / reps, "s", s});
        rep.add({"ckpt_restore", size, "read", ct.read / reps, "s", s});
        rep.add({"ckpt_restore", size, "decrypt", ct.decrypt / reps, "s", s});
        rep.add({"ckpt_restore", size, "total", load_total / reps, "s", s});
        rep.add({"save_speedup", size, "ckpt/mirror", save_total / out_total, "x", s});
        rep.add({"restore_speedup", size, "ckpt/mirror", load_total / in_total, "x", s});
        rep.add({"metadata", size, "envelope_overhead",
                 static_cast<double>(mirror::envelope_metadata_bytes(h, pm_model)), "bytes", s});
        rep.add({"metadata", size, "parameterized_layers", static_cast<double>(model.parameterized_layers()),
                 "layers", s});
        std::filesystem::remove(heap_path);
        std::filesystem::remove(ckpt_path);
    }
    return rep;
}

// ---- Batch decryption ----

BenchReport bench_batch_decrypt(const crypto::Key128& key, const BatchBenchOptions& opts) {
    std::filesystem::create_directories(opts.work_dir);
    const auto& cfg = opts.config;
    data::Dataset d;
    d.rows = opts.rows;
    d.cols = static_cast<std::size_t>(cfg.height) * cfg.width * cfg.channels;
    auto probe = nn::build_model<float>(cfg, opts.seed);
    d.classes = probe.classes();
    SplitMix64 gen(opts.seed);
    d.pixels.resize(d.rows * d.cols);
    for (auto& p : d.pixels) p = static_cast<std::uint8_t>(gen.below(256));
    d.labels.resize(d.rows);
    for (auto& l : d.labels) l = static_cast<std::uint8_t>(gen.below(d.classes));

    const auto heap_path = opts.work_dir / "batch.pm";
    std::filesystem::remove(heap_path);
    auto h = pm::Heap::create(heap_path, data::required_region_bytes(d.rows, d.cols, d.classes) + 4096);
    auto dm = data::load_dataset_to_pm(h, d, key);
    const auto plain = data::to_batch(d);

    const auto batch = static_cast<std::size_t>(cfg.batch);
    const double iters = static_cast<double>(std::max<std::size_t>(opts.iterations, 1));
    BenchReport rep;

    auto run = [&](bool encrypted) {
        auto m = nn::build_model<float>(cfg, opts.seed);
        SplitMix64 rng(opts.seed);
        double fetch = 0.0;
        const auto t0 = Clock::now();
        for (std::size_t i = 0; i < opts.iterations; ++i) {
            const auto f0 = Clock::now();
            nn::Batch b;
            if (encrypted) {
                b = data::decrypt_batch(h, dm, key, batch, rng);
            } else {
                const auto idx = data::sample_rows(d.rows, batch, rng);
                b.size = batch;
                b.input_dim = d.cols;
                b.classes = d.classes;
                b.inputs.resize(batch * d.cols);
                b.labels.resize(batch * d.classes);
                for (std::size_t k = 0; k < batch; ++k) {
                    std::copy_n(plain.input(idx[k]).begin(), d.cols, b.inputs.begin() + k * d.cols);
                    std::copy_n(plain.label(idx[k]).begin(), d.classes, b.labels.begin() + k * d.classes);
                }
            }
            fetch += since(f0);
            nn::train_iteration(m, b, cfg.learning_rate);
        }
        return std::pair{since(t0) / iters, fetch / iters};
    };

    const auto [enc_iter, enc_fetch] = run(true);
    const auto [plain_iter, plain_fetch] = run(false);
    const std::uint64_t size = probe.parameter_bytes();
    rep.add({"batch_decrypt", size, "iteration_encrypted", enc_iter, "s", opts.seed});
    rep.add({"batch_decrypt", size, "iteration_plaintext", plain_iter, "s", opts.seed});
    rep.add({"batch_decrypt", size, "fetch_encrypted", enc_fetch, "s", opts.seed});
    rep.add({"batch_decrypt", size, "fetch_plaintext", plain_fetch, "s", opts.seed});
    rep.add({"batch_decrypt", size, "overhead", enc_iter / plain_iter, "x", opts.seed});
    std::filesystem::remove(heap_path);
    return rep;
}

}  // namespace sealtrain::harness
