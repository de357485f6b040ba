#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace sealtrain::nn {

enum class Activation { kLinear, kLeaky, kRelu, kLogistic };

Activation parse_activation(std::string_view name);
const char* to_string(Activation a) noexcept;

struct ConvSpec {
    int filters = 1;
    int size = 1;
    int stride = 1;
    int pad = 0;  // Darknet flag: when set, padding = size / 2
    Activation activation = Activation::kLeaky;
};

struct MaxPoolSpec {
    int size = 2;
    int stride = 2;
};

struct ConnectedSpec {
    int outputs = 1;
    Activation activation = Activation::kLeaky;
};

struct SoftmaxSpec {};

using LayerSpec = std::variant<ConvSpec, MaxPoolSpec, ConnectedSpec, SoftmaxSpec>;

struct NetConfig {
    int batch = 128;
    float learning_rate = 0.1f;
    std::uint64_t max_iter = 500;
    int height = 28;
    int width = 28;
    int channels = 1;
    std::vector<LayerSpec> layers;
};

/// Darknet-style sections:
///
///   [net]            batch, learning_rate, max_iter, height, width, channels
///   [convolutional]  filters, size, stride, pad, activation
///   [maxpool]        size, stride
///   [connected]      output, activation
///   [softmax]
///
/// `#` and `;` start comments. Unknown sections or keys are errors.
NetConfig parse_config(std::string_view text);
NetConfig load_config(const std::filesystem::path& path);

/// Renders a config back into parseable text.
std::string to_text(const NetConfig& cfg);

}  // namespace sealtrain::nn
