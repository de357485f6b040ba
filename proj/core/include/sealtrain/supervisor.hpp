#pragma once

// Process-level fault injection: a supervisor forks a training worker and
// SIGKILLs it, either at random instants (crash_test) or whenever a spot
// price trace rises above the bid (simulate_spot).

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace sealtrain::harness {

/// A running child process.
class Worker {
public:
    explicit Worker(const std::vector<std::string>& argv, const std::optional<std::filesystem::path>& output = {});
    Worker(const Worker&) = delete;
    Worker& operator=(const Worker&) = delete;
    ~Worker();

    /// Exit status if the worker has finished; -signal when it was killed.
    std::optional<int> poll();
    /// Waits at most `d`; returns the status if it finished.
    std::optional<int> wait_for(std::chrono::milliseconds d);
    int wait();
    void kill();
    [[nodiscard]] int pid() const noexcept { return pid_; }

private:
    int pid_ = -1;
    std::optional<int> status_;
};

/// Work counter observed between launches; it must grow for the watchdog to
/// stay quiet.
using ProgressProbe = std::function<std::uint64_t()>;

/// Default probe: rows loaded + pm.iter from the heap (opened after the
/// worker is dead) plus the loss log's size.
ProgressProbe heap_progress_probe(const std::filesystem::path& heap_path,
                                  const std::optional<std::filesystem::path>& loss_log);

struct CrashTestOptions {
    std::vector<std::string> worker_argv;
    std::filesystem::path heap_path;
    std::optional<std::filesystem::path> loss_log;
    std::chrono::milliseconds kill_min{1000};
    std::chrono::milliseconds kill_max{3000};
    std::size_t crashes = 9;
    std::uint64_t seed = 1;
    /// Consecutive kills without progress before giving up.
    std::size_t watchdog = 5;
    /// Copy of the heap file after every kill, for offline inspection.
    std::optional<std::filesystem::path> snapshot_dir;
    std::optional<std::filesystem::path> worker_output;
    ProgressProbe probe;
};

struct CrashTestReport {
    std::size_t kills = 0;
    std::size_t launches = 0;
    int final_status = -1;
    std::vector<std::uint64_t> progress_at_kill;
    std::vector<std::filesystem::path> snapshots;
};

CrashTestReport crash_test(const CrashTestOptions& opts);

struct SpotPoint {
    std::string timestamp;
    std::int64_t epoch = 0;
    double price = 0.0;
};

/// "timestamp,price" CSV; ISO-8601 (UTC or with offset) or integer epoch
/// seconds. Timestamps must increase strictly and prices must be positive.
std::vector<SpotPoint> parse_spot_trace(const std::filesystem::path& path);
std::vector<SpotPoint> parse_spot_trace_text(const std::string& text);
/// Parses one timestamp to epoch seconds. Throws ParseError.
std::int64_t parse_timestamp(const std::string& s);

/// 1 where the worker may run (max_bid > price).
std::vector<int> spot_states(const std::vector<SpotPoint>& trace, double max_bid);
/// Number of 1 -> 0 transitions.
std::size_t count_interruptions(const std::vector<int>& states);

struct SpotOptions {
    std::vector<std::string> worker_argv;
    double max_bid = 0.0955;
    std::chrono::milliseconds step{1000};
    std::optional<std::filesystem::path> state_log;
    std::optional<std::filesystem::path> worker_output;
    /// Let a still-running worker finish after the trace ends.
    bool finish_after_trace = true;
};

struct SpotReport {
    std::vector<int> states;
    std::size_t interruptions = 0;
    std::size_t kills = 0;
    std::size_t launches = 0;
    bool completed = false;
    int final_status = -1;
};

SpotReport simulate_spot(const std::vector<SpotPoint>& trace, const SpotOptions& opts);

}  // namespace sealtrain::harness
