#pragma once

// Feed-forward CNN with plain SGD.
//
// Convolutional and connected layers own five parameter buffers: weights,
// biases, batch-norm scales, rolling mean and rolling variance. The forward
// pass normalises with the rolling statistics and, in training passes, folds
// the batch statistics into them afterwards (momentum 0.99). The loss is the
// mean cross-entropy of the final softmax.
//
// Everything is templated on the scalar type: training runs in float, the
// gradient checks run the same code in double.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sealtrain/net_config.hpp"

namespace sealtrain::nn {

enum class LayerKind { kConvolutional, kMaxPool, kConnected, kSoftmax };

const char* to_string(LayerKind k) noexcept;

inline constexpr std::size_t kParamBuffers = 5;

enum class Param : std::size_t { kWeights = 0, kBiases = 1, kScales = 2, kRollingMean = 3, kRollingVariance = 4 };

inline constexpr double kLeakySlope = 0.1;
inline constexpr double kBatchNormMomentum = 0.99;
inline constexpr double kBatchNormEpsilon = 1e-5;

struct Shape {
    int channels = 0;
    int height = 0;
    int width = 0;

    [[nodiscard]] std::size_t size() const noexcept {
        return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
               static_cast<std::size_t>(width);
    }
    bool operator==(const Shape&) const = default;
};

template <typename T>
struct BasicLayer {
    LayerKind kind = LayerKind::kSoftmax;
    Shape in;
    Shape out;
    int size = 0;  // kernel / pool window
    int stride = 1;
    int padding = 0;
    Activation activation = Activation::kLinear;

    /// Empty for maxpool and softmax, kParamBuffers entries otherwise.
    std::vector<std::vector<T>> params;
    std::vector<std::vector<T>> grads;

    // Scratch from the last forward pass.
    std::vector<T> cols;    // conv: im2col, (C*k*k) x (B*P)
    std::vector<T> z;       // pre-normalisation, channels x (B*P)
    std::vector<T> y;       // post-normalisation, pre-activation
    std::vector<T> output;  // B x out.size(), sample-major
    std::vector<T> delta;   // dLoss/d(output)
    std::vector<std::size_t> argmax;
    std::vector<T> batch_mean;
    std::vector<T> batch_var;
    std::vector<T> norm_mean;  // rolling statistics as used by the last forward
    std::vector<T> norm_var;

    [[nodiscard]] bool parameterized() const noexcept { return !params.empty(); }
    [[nodiscard]] std::vector<T>& param(Param p) { return params.at(static_cast<std::size_t>(p)); }
    [[nodiscard]] const std::vector<T>& param(Param p) const { return params.at(static_cast<std::size_t>(p)); }
    [[nodiscard]] std::vector<T>& grad(Param p) { return grads.at(static_cast<std::size_t>(p)); }
    [[nodiscard]] const std::vector<T>& grad(Param p) const { return grads.at(static_cast<std::size_t>(p)); }
};

template <typename T>
struct BasicBatch {
    std::size_t size = 0;
    std::size_t input_dim = 0;
    std::size_t classes = 0;
    std::vector<T> inputs;  // size x input_dim
    std::vector<T> labels;  // size x classes, one-hot

    [[nodiscard]] std::span<const T> input(std::size_t i) const {
        return std::span<const T>(inputs).subspan(i * input_dim, input_dim);
    }
    [[nodiscard]] std::span<const T> label(std::size_t i) const {
        return std::span<const T>(labels).subspan(i * classes, classes);
    }
};

template <typename T>
class BasicModel {
public:
    Shape input;
    std::vector<BasicLayer<T>> layers;

    [[nodiscard]] std::size_t numL() const noexcept { return layers.size(); }
    [[nodiscard]] std::size_t classes() const noexcept { return layers.empty() ? 0 : layers.back().out.size(); }
    [[nodiscard]] std::size_t parameterized_layers() const noexcept;
    [[nodiscard]] std::size_t parameter_buffers() const noexcept;
    [[nodiscard]] std::size_t parameter_bytes() const noexcept;
    /// Softmax outputs of the last forward pass, B x classes.
    [[nodiscard]] std::span<const T> outputs() const noexcept { return layers.back().output; }
    /// Parameter-only copy in another scalar type (no scratch state).
    template <typename U>
    [[nodiscard]] BasicModel<U> cast() const;

    /// Batch size of the cached training forward pass; 0 when there is none.
    std::size_t cached_batch = 0;
};

using Model = BasicModel<float>;
using Batch = BasicBatch<float>;

enum class Pass { kTrain, kInference };

template <typename T>
struct ForwardResult {
    std::span<const T> outputs;
    double loss = 0.0;
};

template <typename T>
BasicModel<T> build_model(const NetConfig& cfg, std::uint64_t seed);

/// Runs the network on `batch`. Training passes update the rolling
/// batch-norm statistics after using them and keep the activations for
/// backward().
template <typename T>
ForwardResult<T> forward(BasicModel<T>& m, const BasicBatch<T>& batch, Pass pass = Pass::kTrain);

/// Fills the gradient buffers of every parameterised layer (all five,
/// including d(loss)/d(rolling stats)). Requires a training forward pass
/// on the same batch.
template <typename T>
void backward(BasicModel<T>& m, const BasicBatch<T>& batch);

/// p <- p - lr * grad for weights, biases and scales; gradients are cleared.
/// Rolling statistics are not learned and are left to forward().
template <typename T>
void sgd_update(BasicModel<T>& m, T lr);

/// forward + backward + sgd_update; returns the pre-update loss.
template <typename T>
double train_iteration(BasicModel<T>& m, const BasicBatch<T>& batch, T lr);

/// argmax of the softmax output, lowest index on ties.
template <typename T>
std::size_t predict(BasicModel<T>& m, std::span<const T> input);

/// Index of the largest value, lowest index on ties.
template <typename T>
std::size_t argmax(std::span<const T> values);

/// Mean cross-entropy over `batch` in inference mode (no statistic updates).
template <typename T>
double evaluate_loss(BasicModel<T>& m, const BasicBatch<T>& batch, std::size_t chunk = 256);

/// Fraction of samples in `batch` whose prediction matches the label's argmax.
template <typename T>
double accuracy(BasicModel<T>& m, const BasicBatch<T>& batch, std::size_t chunk = 256);

/// Extracts samples [first, first + count) of `batch`.
template <typename T>
BasicBatch<T> slice(const BasicBatch<T>& batch, std::size_t first, std::size_t count);

}  // namespace sealtrain::nn
