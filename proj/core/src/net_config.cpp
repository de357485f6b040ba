#include "sealtrain/net_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "sealtrain/error.hpp"

namespace sealtrain::nn {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view v, std::string_view key, std::size_t line) {
    T out{};
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || ptr != end) {
        throw ConfigError("bad value '" + std::string(v) + "' for " + std::string(key), line);
    }
    return out;
}

int parse_positive(std::string_view v, std::string_view key, std::size_t line) {
    const int n = parse_number<int>(v, key, line);
    if (n <= 0) {
        throw ConfigError(std::string(key) + " must be positive", line);
    }
    return n;
}

enum class Section { kNone, kNet, kConv, kMaxPool, kConnected, kSoftmax };

Section section_from(std::string_view name, std::size_t line) {
    if (name == "net" || name == "network") return Section::kNet;
    if (name == "convolutional" || name == "conv") return Section::kConv;
    if (name == "maxpool" || name == "max") return Section::kMaxPool;
    if (name == "connected" || name == "conn") return Section::kConnected;
    if (name == "softmax" || name == "soft") return Section::kSoftmax;
    throw ConfigError("unknown section [" + std::string(name) + "]", line);
}

}  // namespace

Activation parse_activation(std::string_view name) {
    if (name == "linear") return Activation::kLinear;
    if (name == "leaky") return Activation::kLeaky;
    if (name == "relu") return Activation::kRelu;
    if (name == "logistic") return Activation::kLogistic;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

const char* to_string(Activation a) noexcept {
    switch (a) {
        case Activation::kLinear: return "linear";
        case Activation::kLeaky: return "leaky";
        case Activation::kRelu: return "relu";
        case Activation::kLogistic: return "logistic";
    }
    return "?";
}

NetConfig parse_config(std::string_view text) {
    NetConfig cfg;
    Section current = Section::kNone;
    bool seen_net = false;
    std::size_t line_no = 0;

    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;

        if (const auto c = line.find_first_of("#;"); c != std::string_view::npos) {
            line = line.substr(0, c);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("unterminated section header", line_no);
            }
            current = section_from(trim(line.substr(1, line.size() - 2)), line_no);
            switch (current) {
                case Section::kNet:
                    if (seen_net || !cfg.layers.empty()) {
                        throw ConfigError("[net] must appear once, first", line_no);
                    }
                    seen_net = true;
                    break;
                case Section::kConv: cfg.layers.emplace_back(ConvSpec{}); break;
                case Section::kMaxPool: cfg.layers.emplace_back(MaxPoolSpec{}); break;
                case Section::kConnected: cfg.layers.emplace_back(ConnectedSpec{}); break;
                case Section::kSoftmax: cfg.layers.emplace_back(SoftmaxSpec{}); break;
                case Section::kNone: break;
            }
            continue;
        }

        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("expected key=value", line_no);
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        auto unknown = [&] { return ConfigError("unknown key '" + std::string(key) + "'", line_no); };

        switch (current) {
            case Section::kNone:
                throw ConfigError("key outside of a section", line_no);
            case Section::kNet:
                if (key == "batch") {
                    const int b = parse_number<int>(value, key, line_no);
                    if (b < 1) throw ConfigError("batch must be at least 1", line_no);
                    cfg.batch = b;
                } else if (key == "learning_rate") {
                    const float lr = parse_number<float>(value, key, line_no);
                    if (!(lr > 0.0f)) throw ConfigError("learning_rate must be positive", line_no);
                    cfg.learning_rate = lr;
                } else if (key == "max_iter" || key == "max_batches") {
                    cfg.max_iter = parse_number<std::uint64_t>(value, key, line_no);
                } else if (key == "height") {
                    cfg.height = parse_positive(value, key, line_no);
                } else if (key == "width") {
                    cfg.width = parse_positive(value, key, line_no);
                } else if (key == "channels") {
                    cfg.channels = parse_positive(value, key, line_no);
                } else {
                    throw unknown();
                }
                break;
            case Section::kConv: {
                auto& s = std::get<ConvSpec>(cfg.layers.back());
                if (key == "filters") s.filters = parse_positive(value, key, line_no);
                else if (key == "size") s.size = parse_positive(value, key, line_no);
                else if (key == "stride") s.stride = parse_positive(value, key, line_no);
                else if (key == "pad") s.pad = parse_number<int>(value, key, line_no) != 0 ? 1 : 0;
                else if (key == "activation") {
                    try {
                        s.activation = parse_activation(value);
                    } catch (const ConfigError& e) {
                        throw ConfigError(e.what(), line_no);
                    }
                } else throw unknown();
                break;
            }
            case Section::kMaxPool: {
                auto& s = std::get<MaxPoolSpec>(cfg.layers.back());
                if (key == "size") s.size = parse_positive(value, key, line_no);
                else if (key == "stride") s.stride = parse_positive(value, key, line_no);
                else throw unknown();
                break;
            }
            case Section::kConnected: {
                auto& s = std::get<ConnectedSpec>(cfg.layers.back());
                if (key == "output") s.outputs = parse_positive(value, key, line_no);
                else if (key == "activation") {
                    try {
                        s.activation = parse_activation(value);
                    } catch (const ConfigError& e) {
                        throw ConfigError(e.what(), line_no);
                    }
                } else throw unknown();
                break;
            }
            case Section::kSoftmax:
                throw unknown();
        }
    }

    std::size_t softmax_count = 0;
    for (const auto& l : cfg.layers) {
        softmax_count += std::holds_alternative<SoftmaxSpec>(l) ? 1 : 0;
    }
    if (softmax_count != 1 || !std::holds_alternative<SoftmaxSpec>(cfg.layers.back())) {
        throw ConfigError("config needs exactly one [softmax] layer, and it must be last");
    }
    return cfg;
}

NetConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) {
        throw ConfigError("cannot open config " + path.string());
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string to_text(const NetConfig& cfg) {
    std::ostringstream os;
    os << "[net]\nbatch=" << cfg.batch << "\nlearning_rate=" << cfg.learning_rate << "\nmax_iter=" << cfg.max_iter
       << "\nheight=" << cfg.height << "\nwidth=" << cfg.width << "\nchannels=" << cfg.channels << "\n";
    for (const auto& l : cfg.layers) {
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, ConvSpec>) {
                    os << "\n[convolutional]\nfilters=" << s.filters << "\nsize=" << s.size << "\nstride=" << s.stride
                       << "\npad=" << s.pad << "\nactivation=" << to_string(s.activation) << "\n";
                } else if constexpr (std::is_same_v<T, MaxPoolSpec>) {
                    os << "\n[maxpool]\nsize=" << s.size << "\nstride=" << s.stride << "\n";
                } else if constexpr (std::is_same_v<T, ConnectedSpec>) {
                    os << "\n[connected]\noutput=" << s.outputs << "\nactivation=" << to_string(s.activation)
                       << "\n";
                } else {
                    os << "\n[softmax]\n";
                }
            },
            l);
    }
    return os.str();
}

}  // namespace sealtrain::nn
