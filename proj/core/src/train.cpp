#include "sealtrain/train.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include "sealtrain/durable_txn.hpp"
#include "sealtrain/error.hpp"
#include "sealtrain/mirror.hpp"
#include "sealtrain/pm_data.hpp"
#include "sealtrain/rng.hpp"

namespace sealtrain::harness {

namespace {

constexpr const char* kLossHeader = "iteration,loss";

std::string format_loss(std::uint64_t iteration, double loss) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%llu,%.17g\n", static_cast<unsigned long long>(iteration), loss);
    return buf;
}

// Keeps the header and the first `keep` entries.
void truncate_loss_log(const std::filesystem::path& path, std::uint64_t keep) {
    std::ifstream in(path);
    if (!in) {
        return;
    }
    std::ostringstream kept;
    std::string line;
    std::uint64_t n = 0;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            kept << kLossHeader << '\n';
            if (line == kLossHeader) continue;
        }
        if (line.empty()) continue;
        if (n == keep) break;
        kept << line << '\n';
        ++n;
    }
    in.close();
    std::ofstream out(path, std::ios::trunc);
    out << kept.str();
}

class LossLog {
public:
    LossLog(const std::optional<std::filesystem::path>& path, std::optional<std::uint64_t> keep) {
        if (!path) {
            return;
        }
        if (keep && std::filesystem::exists(*path)) {
            truncate_loss_log(*path, *keep);
        }
        const bool fresh = !std::filesystem::exists(*path) || std::filesystem::file_size(*path) == 0;
        f_ = std::fopen(path->c_str(), "a");
        if (f_ == nullptr) {
            throw Error("cannot open loss log " + path->string());
        }
        if (fresh) {
            std::fprintf(f_, "%s\n", kLossHeader);
            std::fflush(f_);
        }
    }
    LossLog(const LossLog&) = delete;
    LossLog& operator=(const LossLog&) = delete;
    ~LossLog() {
        if (f_ != nullptr) std::fclose(f_);
    }

    void append(std::uint64_t iteration, double loss) {
        if (f_ == nullptr) return;
        const auto s = format_loss(iteration, loss);
        std::fputs(s.c_str(), f_);
        // Reaches the kernel before mirror_out commits, so a kill cannot lose it.
        std::fflush(f_);
    }

private:
    std::FILE* f_ = nullptr;
};

}  // namespace

const char* to_string(ResumeMode m) noexcept {
    switch (m) {
        case ResumeMode::kExactReplay: return "exact";
        case ResumeMode::kNoReplay: return "no-replay";
        case ResumeMode::kNoRestore: return "no-restore";
    }
    return "?";
}

std::uint64_t initial_rng_state(std::uint64_t seed) noexcept {
    SplitMix64 g(seed ^ 0x5ea17a1d0b5eed00ULL);
    return g.next();
}

std::uint64_t reseeded_rng_state(std::uint64_t seed, std::uint64_t iter) noexcept {
    SplitMix64 g(initial_rng_state(seed) ^ (0xa0761d6478bd642fULL * (iter + 1)));
    g.next();
    return g.next();
}

TrainResult train_model(const TrainRun& run) {
    if (run.mirror_frequency == 0) {
        throw Error("mirror frequency must be at least 1");
    }
    const std::uint64_t max_iter = run.max_iter.value_or(run.config.max_iter);
    const auto lr = run.config.learning_rate;

    auto heap = pm::Heap::open(run.heap_path);
    if (!data::pm_data_exists(heap)) {
        if (!run.data) {
            throw Error("heap has no training data; load it first");
        }
        data::load_dataset_to_pm(heap, *run.data, run.key);
    }
    auto dm = *data::find_matrix(heap);

    TrainResult res;
    res.model = nn::build_model<float>(run.config, run.seed);
    if (res.model.input.size() != dm.cols || res.model.classes() != dm.classes) {
        throw ShapeError("network input/output does not match the training matrix (" + std::to_string(dm.cols) +
                         " features, " + std::to_string(dm.classes) + " classes)");
    }

    SplitMix64 rng(initial_rng_state(run.seed));
    std::uint64_t iter = 0;
    mirror::PmModel pm_model;
    if (auto found = mirror::find_mirror(heap)) {
        pm_model = *found;
        if (run.mode != ResumeMode::kNoRestore) {
            const auto st = mirror::mirror_in(heap, pm_model, res.model, run.key);
            res.restored = st.restored;
            if (st.restored) {
                iter = st.iter;
                rng.set_state(run.mode == ResumeMode::kExactReplay ? st.rng_cursor
                                                                   : reseeded_rng_state(run.seed, iter));
            }
        }
    } else {
        pm_model = mirror::alloc_mirror_model(heap, res.model, rng.state());
    }
    res.start_iter = iter;

    LossLog log(run.loss_log, run.mode == ResumeMode::kNoRestore ? std::nullopt : std::optional(iter));

    std::uint64_t done_here = 0;
    while (iter < max_iter) {
        if (run.stop_flag != nullptr && run.stop_flag->load()) break;
        if (run.stop_after && done_here >= *run.stop_after) break;

        const auto batch = data::decrypt_batch(heap, dm, run.key, static_cast<std::size_t>(run.config.batch), rng);
        const double loss = nn::train_iteration(res.model, batch, lr);
        ++iter;
        ++done_here;
        res.losses.push_back(loss);
        log.append(iter, loss);
        if (iter % run.mirror_frequency == 0 || iter == max_iter) {
            mirror::mirror_out(heap, pm_model, res.model, iter, rng.state(), run.key);
        }
        if (run.iter_delay.count() > 0) {
            std::this_thread::sleep_for(run.iter_delay);
        }
    }
    // Iterations past the last mirror point are lost on purpose: the next
    // launch replays them from the snapshot.
    res.final_iter = iter;
    res.completed = iter >= max_iter;
    return res;
}

std::vector<LossEntry> read_loss_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open loss log " + path.string());
    }
    std::vector<LossEntry> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line == kLossHeader) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw ParseError("bad loss log line: " + line);
        }
        out.push_back({std::stoull(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
    }
    return out;
}

nn::Model load_trained_model(const std::filesystem::path& heap_path, const nn::NetConfig& cfg,
                             const crypto::Key128& key) {
    auto heap = pm::Heap::open(heap_path);
    const auto pm_model = mirror::find_mirror(heap);
    if (!pm_model) {
        throw Error("heap holds no model");
    }
    auto m = nn::build_model<float>(cfg, 0);
    if (!mirror::mirror_in(heap, *pm_model, m, key).restored) {
        throw Error("model mirror holds no snapshot yet");
    }
    return m;
}

double infer(const std::filesystem::path& heap_path, const nn::NetConfig& cfg, const crypto::Key128& key,
             const data::Dataset& test) {
    auto m = load_trained_model(heap_path, cfg, key);
    return nn::accuracy(m, data::to_batch(test));
}

}  // namespace sealtrain::harness
