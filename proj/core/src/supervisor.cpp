#include "sealtrain/supervisor.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>
#include <ctime>
#include <cctype>
#include <iomanip>
#include <fstream>
#include <sstream>
#include <thread>

#include "sealtrain/durable_txn.hpp"
#include "sealtrain/error.hpp"
#include "sealtrain/mirror.hpp"
#include "sealtrain/pm_data.hpp"
#include "sealtrain/rng.hpp"

namespace sealtrain::harness {

namespace {

int decode_status(int raw) {
    if (WIFEXITED(raw)) return WEXITSTATUS(raw);
    if (WIFSIGNALED(raw)) return -WTERMSIG(raw);
    return -1;
}

}  // namespace

Worker::Worker(const std::vector<std::string>& argv, const std::optional<std::filesystem::path>& output) {
    if (argv.empty()) {
        throw Error("worker command is empty");
    }
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    int out_fd = -1;
    if (output) {
        out_fd = ::open(output->c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
        if (out_fd < 0) throw Error("cannot open worker output " + output->string());
    }
    pid_ = ::fork();
    if (pid_ < 0) {
        if (out_fd >= 0) ::close(out_fd);
        throw Error(std::string("fork failed: ") + std::strerror(errno));
    }
    if (pid_ == 0) {
        if (out_fd >= 0) {
            ::dup2(out_fd, STDOUT_FILENO);
            ::dup2(out_fd, STDERR_FILENO);
        }
        ::execv(args[0], args.data());
        ::_exit(127);
    }
    if (out_fd >= 0) ::close(out_fd);
}

Worker::~Worker() {
    if (!status_) {
        kill();
    }
}

std::optional<int> Worker::poll() {
    if (status_) return status_;
    int raw = 0;
    const int r = ::waitpid(pid_, &raw, WNOHANG);
    if (r == pid_) status_ = decode_status(raw);
    return status_;
}

std::optional<int> Worker::wait_for(std::chrono::milliseconds d) {
    const auto deadline = std::chrono::steady_clock::now() + d;
    while (!poll()) {
        if (std::chrono::steady_clock::now() >= deadline) return std::nullopt;
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    return status_;
}

int Worker::wait() {
    if (status_) return *status_;
    int raw = 0;
    while (::waitpid(pid_, &raw, 0) < 0 && errno == EINTR) {
    }
    status_ = decode_status(raw);
    return *status_;
}

void Worker::kill() {
    if (status_) return;
    ::kill(pid_, SIGKILL);
    wait();
}

ProgressProbe heap_progress_probe(const std::filesystem::path& heap_path,
                                  const std::optional<std::filesystem::path>& loss_log) {
    return [heap_path, loss_log]() -> std::uint64_t {
        std::uint64_t p = 0;
        if (std::filesystem::exists(heap_path)) {
            auto h = pm::Heap::open(heap_path);
            if (const auto rows = data::pending_load_rows(h)) p += *rows;
            if (const auto m = data::find_matrix(h)) p += m->rows;
            if (const auto pm_model = mirror::find_mirror(h)) p += mirror::mirror_iter(h, *pm_model);
        }
        if (loss_log && std::filesystem::exists(*loss_log)) p += std::filesystem::file_size(*loss_log);
        return p;
    };
}

CrashTestReport crash_test(const CrashTestOptions& opts) {
    if (opts.kill_max < opts.kill_min) {
        throw Error("kill interval is empty");
    }
    const auto probe = opts.probe ? opts.probe : heap_progress_probe(opts.heap_path, opts.loss_log);
    if (opts.snapshot_dir) std::filesystem::create_directories(*opts.snapshot_dir);
    SplitMix64 rng(opts.seed);
    CrashTestReport rep;
    std::uint64_t last = probe();
    std::size_t stalled = 0;

    while (true) {
        Worker w(opts.worker_argv, opts.worker_output);
        ++rep.launches;
        if (rep.kills >= opts.crashes) {
            rep.final_status = w.wait();
            break;
        }
        const auto span = static_cast<std::uint64_t>((opts.kill_max - opts.kill_min).count());
        const auto delay = opts.kill_min + std::chrono::milliseconds(rng.below(span + 1));
        if (const auto st = w.wait_for(delay)) {
            // Finished (or failed) before the kill landed.
            rep.final_status = *st;
            break;
        }
        w.kill();
        ++rep.kills;
        const auto now = probe();
        rep.progress_at_kill.push_back(now);
        if (opts.snapshot_dir) {
            const auto snap = *opts.snapshot_dir / ("kill-" + std::to_string(rep.kills) + ".pm");
            std::filesystem::copy_file(opts.heap_path, snap, std::filesystem::copy_options::overwrite_existing);
            rep.snapshots.push_back(snap);
        }
        stalled = now == last ? stalled + 1 : 0;
        last = now;
        if (opts.watchdog > 0 && stalled >= opts.watchdog) {
            throw Error("worker made no progress across " + std::to_string(stalled) + " consecutive kills");
        }
    }
    return rep;
}

// ---- Spot traces ----

std::int64_t parse_timestamp(const std::string& raw) {
    const auto s = raw.substr(0, raw.find_last_not_of(" \t\r") + 1);
    if (s.empty()) throw ParseError("empty timestamp");
    std::int64_t epoch = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), epoch);
    if (ec == std::errc{} && ptr == s.data() + s.size()) {
        return epoch;
    }
    std::tm tm{};
    std::istringstream is(s);
    char sep = 0;
    is >> std::get_time(&tm, "%Y-%m-%d");
    is.get(sep);
    if (is.fail() || (sep != 'T' && sep != ' ')) {
        throw ParseError("bad timestamp '" + s + "'");
    }
    is >> std::get_time(&tm, "%H:%M");
    if (is.fail()) throw ParseError("bad timestamp '" + s + "'");
    if (is.peek() == ':') {
        is.get();
        int sec = -1;
        is >> sec;
        if (is.fail() || sec < 0 || sec > 60) throw ParseError("bad timestamp '" + s + "'");
        tm.tm_sec = sec;
        if (is.peek() == '.') {
            is.get();
            while (std::isdigit(is.peek())) is.get();
        }
    }
    std::int64_t offset = 0;
    const int c = is.peek();
    if (c == 'Z') {
        is.get();
    } else if (c == '+' || c == '-') {
        is.get();
        int hh = 0, mm = 0;
        char colon = 0;
        is >> hh;
        if (is.peek() == ':') is >> colon;
        is >> mm;
        if (is.fail()) throw ParseError("bad UTC offset in '" + s + "'");
        offset = (c == '+' ? 1 : -1) * (hh * 3600 + mm * 60);
    }
    if (is.peek() != std::char_traits<char>::eof()) {
        throw ParseError("trailing characters in timestamp '" + s + "'");
    }
    return static_cast<std::int64_t>(::timegm(&tm)) - offset;
}

std::vector<SpotPoint> parse_spot_trace_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<SpotPoint> out;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header_seen) {
            header_seen = true;
            if (line != "timestamp,price") {
                throw ParseError("trace line 1: expected header 'timestamp,price'");
            }
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw ParseError("trace line " + std::to_string(line_no) + ": expected timestamp,price");
        }
        SpotPoint p;
        p.timestamp = line.substr(0, comma);
        try {
            p.epoch = parse_timestamp(p.timestamp);
        } catch (const ParseError& e) {
            throw ParseError("trace line " + std::to_string(line_no) + ": " + e.what());
        }
        const auto price = line.substr(comma + 1);
        char* end = nullptr;
        p.price = std::strtod(price.c_str(), &end);
        if (end == price.c_str() || *end != '\0' || !(p.price > 0.0)) {
            throw ParseError("trace line " + std::to_string(line_no) + ": price must be a positive number");
        }
        if (!out.empty() && p.epoch <= out.back().epoch) {
            throw ParseError("trace line " + std::to_string(line_no) + ": timestamps must increase");
        }
        out.push_back(std::move(p));
    }
    if (!header_seen) throw ParseError("empty trace");
    return out;
}

std::vector<SpotPoint> parse_spot_trace(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open trace " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_spot_trace_text(ss.str());
}

std::vector<int> spot_states(const std::vector<SpotPoint>& trace, double max_bid) {
    std::vector<int> s;
    s.reserve(trace.size());
    for (const auto& p : trace) s.push_back(max_bid > p.price ? 1 : 0);
    return s;
}

std::size_t count_interruptions(const std::vector<int>& states) {
    std::size_t n = 0;
    for (std::size_t i = 1; i < states.size(); ++i) {
        n += (states[i - 1] == 1 && states[i] == 0) ? 1 : 0;
    }
    return n;
}

SpotReport simulate_spot(const std::vector<SpotPoint>& trace, const SpotOptions& opts) {
    SpotReport rep;
    rep.states = spot_states(trace, opts.max_bid);
    rep.interruptions = count_interruptions(rep.states);

    std::ofstream log;
    if (opts.state_log) {
        log.open(*opts.state_log, std::ios::trunc);
        log << "timestamp,price,state\n";
    }
    std::optional<Worker> w;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const int state = rep.states[i];
        if (log.is_open()) log << trace[i].timestamp << ',' << trace[i].price << ',' << state << '\n';
        if (state == 1 && !w && !rep.completed) {
            w.emplace(opts.worker_argv, opts.worker_output);
            ++rep.launches;
        } else if (state == 0 && w) {
            if (!w->poll()) ++rep.kills;
            w->kill();
            rep.final_status = *w->poll();
            w.reset();
        }
        if (w) {
            if (const auto st = w->wait_for(opts.step)) {
                rep.final_status = *st;
                rep.completed = *st == 0;
                if (*st != 0) {
                    throw Error("worker exited with status " + std::to_string(*st));
                }
                w.reset();
            }
        } else {
            std::this_thread::sleep_for(opts.step);
        }
    }
    if (w) {
        if (opts.finish_after_trace) {
            rep.final_status = w->wait();
            rep.completed = rep.final_status == 0;
        } else {
            ++rep.kills;
            w->kill();
        }
    }
    return rep;
}

}  // namespace sealtrain::harness
