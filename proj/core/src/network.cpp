#include "sealtrain/network.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sealtrain/error.hpp"
#include "sealtrain/rng.hpp"

namespace sealtrain::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
T activate(Activation a, T x) {
    switch (a) {
        case Activation::kLinear: return x;
        case Activation::kLeaky: return x > T(0) ? x : T(kLeakySlope) * x;
        case Activation::kRelu: return x > T(0) ? x : T(0);
        case Activation::kLogistic: return T(1) / (T(1) + std::exp(-x));
    }
    return x;
}

/// d(act)/dx given the pre-activation x and the activation value out.
template <typename T>
T activation_gradient(Activation a, T x, T out) {
    switch (a) {
        case Activation::kLinear: return T(1);
        case Activation::kLeaky: return x > T(0) ? T(1) : T(kLeakySlope);
        case Activation::kRelu: return x > T(0) ? T(1) : T(0);
        case Activation::kLogistic: return out * (T(1) - out);
    }
    return T(1);
}

int conv_out(int in, int size, int stride, int padding) { return (in + 2 * padding - size) / stride + 1; }

// Darknet maxpool geometry: implicit padding of size - 1, offset -padding / 2.
int pool_out(int in, int size, int stride) { return (in + (size - 1) - size) / stride + 1; }
int pool_offset(int size) { return -((size - 1) / 2); }

template <typename T>
void init_params(BasicLayer<T>& l, std::size_t weights, std::size_t channels, std::size_t fan_in, SplitMix64& rng) {
    l.params.assign(kParamBuffers, {});
    l.grads.assign(kParamBuffers, {});
    const double bound = std::sqrt(2.0 / static_cast<double>(fan_in));
    auto& w = l.param(Param::kWeights);
    w.resize(weights);
    for (auto& v : w) {
        v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    }
    l.param(Param::kBiases).assign(channels, T(0));
    l.param(Param::kScales).assign(channels, T(1));
    l.param(Param::kRollingMean).assign(channels, T(0));
    l.param(Param::kRollingVariance).assign(channels, T(1));
    for (std::size_t i = 0; i < kParamBuffers; ++i) {
        l.grads[i].assign(l.params[i].size(), T(0));
    }
}

// Batch norm over `z` laid out channels x m. Writes y and the batch
// statistics; normalisation uses the rolling statistics.
template <typename T>
void normalize_forward(BasicLayer<T>& l, std::size_t channels, std::size_t m) {
    const auto& scale = l.param(Param::kScales);
    const auto& bias = l.param(Param::kBiases);
    const auto& mean = l.param(Param::kRollingMean);
    const auto& var = l.param(Param::kRollingVariance);
    l.y.resize(l.z.size());
    l.batch_mean.assign(channels, T(0));
    l.batch_var.assign(channels, T(0));
    l.norm_mean.assign(mean.begin(), mean.end());
    l.norm_var.assign(var.begin(), var.end());
    for (std::size_t c = 0; c < channels; ++c) {
        const T* zc = l.z.data() + c * m;
        T* yc = l.y.data() + c * m;
        const T inv = T(1) / std::sqrt(var[c] + T(kBatchNormEpsilon));
        double sum = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            sum += static_cast<double>(zc[i]);
            yc[i] = scale[c] * (zc[i] - mean[c]) * inv + bias[c];
        }
        const double mu = sum / static_cast<double>(m);
        double sq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double d = static_cast<double>(zc[i]) - mu;
            sq += d * d;
        }
        l.batch_mean[c] = static_cast<T>(mu);
        l.batch_var[c] = static_cast<T>(sq / static_cast<double>(m));
    }
}

template <typename T>
void fold_statistics(BasicLayer<T>& l) {
    auto& mean = l.param(Param::kRollingMean);
    auto& var = l.param(Param::kRollingVariance);
    const T keep = T(kBatchNormMomentum);
    for (std::size_t c = 0; c < mean.size(); ++c) {
        mean[c] = keep * mean[c] + (T(1) - keep) * l.batch_mean[c];
        var[c] = keep * var[c] + (T(1) - keep) * l.batch_var[c];
    }
}

// Converts delta (B x channels*P, sample-major) into dz (channels x B*P) and
// fills the bias/scale/statistic gradients.
template <typename T>
std::vector<T> normalize_backward(BasicLayer<T>& l, std::size_t batch, std::size_t channels, std::size_t spatial) {
    const auto& scale = l.param(Param::kScales);
    const auto& mean = l.norm_mean;
    const auto& var = l.norm_var;
    const std::size_t m = batch * spatial;
    std::vector<T> dz(channels * m);
    auto& gb = l.grad(Param::kBiases);
    auto& gs = l.grad(Param::kScales);
    auto& gm = l.grad(Param::kRollingMean);
    auto& gv = l.grad(Param::kRollingVariance);
    for (std::size_t c = 0; c < channels; ++c) {
        const T inv = T(1) / std::sqrt(var[c] + T(kBatchNormEpsilon));
        T sum_dy = 0;
        T sum_dy_xhat = 0;
        T sum_dy_centered = 0;
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t p = 0; p < spatial; ++p) {
                const std::size_t i = c * m + b * spatial + p;
                const std::size_t o = b * channels * spatial + c * spatial + p;
                const T act = l.output[o];
                const T dy = l.delta[o] * activation_gradient(l.activation, l.y[i], act);
                const T centered = l.z[i] - mean[c];
                sum_dy += dy;
                sum_dy_xhat += dy * centered * inv;
                sum_dy_centered += dy * centered;
                dz[i] = dy * scale[c] * inv;
            }
        }
        gb[c] = sum_dy;
        gs[c] = sum_dy_xhat;
        gm[c] = -sum_dy * scale[c] * inv;
        gv[c] = sum_dy_centered * scale[c] * T(-0.5) * inv * inv * inv;
    }
    return dz;
}

template <typename T>
void conv_forward(BasicLayer<T>& l, std::span<const T> x, std::size_t batch, Pass pass) {
    const int c_in = l.in.channels, h = l.in.height, w = l.in.width;
    const int k = l.size, s = l.stride, pad = l.padding;
    const int oh = l.out.height, ow = l.out.width, f = l.out.channels;
    const std::size_t spatial = static_cast<std::size_t>(oh) * ow;
    const std::size_t rows = static_cast<std::size_t>(c_in) * k * k;
    const std::size_t m = batch * spatial;

    l.cols.assign(rows * m, T(0));
    for (std::size_t b = 0; b < batch; ++b) {
        const T* xb = x.data() + b * l.in.size();
        for (int c = 0; c < c_in; ++c) {
            for (int ki = 0; ki < k; ++ki) {
                for (int kj = 0; kj < k; ++kj) {
                    const std::size_t r = (static_cast<std::size_t>(c) * k + ki) * k + kj;
                    T* dst = l.cols.data() + r * m + b * spatial;
                    for (int y = 0; y < oh; ++y) {
                        const int iy = y * s - pad + ki;
                        if (iy < 0 || iy >= h) continue;
                        for (int xo = 0; xo < ow; ++xo) {
                            const int ix = xo * s - pad + kj;
                            if (ix < 0 || ix >= w) continue;
                            dst[static_cast<std::size_t>(y) * ow + xo] =
                                xb[(static_cast<std::size_t>(c) * h + iy) * w + ix];
                        }
                    }
                }
            }
        }
    }

    l.z.resize(static_cast<std::size_t>(f) * m);
    ConstMatMap<T> wm(l.param(Param::kWeights).data(), f, static_cast<Eigen::Index>(rows));
    ConstMatMap<T> cm(l.cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(m));
    MatMap<T> zm(l.z.data(), f, static_cast<Eigen::Index>(m));
    zm.noalias() = wm * cm;

    normalize_forward(l, static_cast<std::size_t>(f), m);
    l.output.resize(batch * l.out.size());
    for (int c = 0; c < f; ++c) {
        for (std::size_t b = 0; b < batch; ++b) {
            const T* yc = l.y.data() + static_cast<std::size_t>(c) * m + b * spatial;
            T* out = l.output.data() + b * l.out.size() + static_cast<std::size_t>(c) * spatial;
            for (std::size_t p = 0; p < spatial; ++p) {
                out[p] = activate(l.activation, yc[p]);
            }
        }
    }
    if (pass == Pass::kTrain) {
        fold_statistics(l);
    }
}

template <typename T>
void conv_backward(BasicLayer<T>& l, std::size_t batch, T* prev_delta) {
    const int c_in = l.in.channels, h = l.in.height, w = l.in.width;
    const int k = l.size, s = l.stride, pad = l.padding;
    const int oh = l.out.height, ow = l.out.width, f = l.out.channels;
    const std::size_t spatial = static_cast<std::size_t>(oh) * ow;
    const std::size_t rows = static_cast<std::size_t>(c_in) * k * k;
    const std::size_t m = batch * spatial;

    std::vector<T> dz = normalize_backward(l, batch, static_cast<std::size_t>(f), spatial);
    ConstMatMap<T> dzm(dz.data(), f, static_cast<Eigen::Index>(m));
    ConstMatMap<T> cm(l.cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(m));
    MatMap<T> gw(l.grad(Param::kWeights).data(), f, static_cast<Eigen::Index>(rows));
    gw.noalias() = dzm * cm.transpose();

    if (prev_delta == nullptr) {
        return;
    }
    RowMat<T> dcols(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(m));
    ConstMatMap<T> wm(l.param(Param::kWeights).data(), f, static_cast<Eigen::Index>(rows));
    dcols.noalias() = wm.transpose() * dzm;
    for (std::size_t b = 0; b < batch; ++b) {
        T* db = prev_delta + b * l.in.size();
        for (int c = 0; c < c_in; ++c) {
            for (int ki = 0; ki < k; ++ki) {
                for (int kj = 0; kj < k; ++kj) {
                    const std::size_t r = (static_cast<std::size_t>(c) * k + ki) * k + kj;
                    const T* src = dcols.data() + r * m + b * spatial;
                    for (int y = 0; y < oh; ++y) {
                        const int iy = y * s - pad + ki;
                        if (iy < 0 || iy >= h) continue;
                        for (int xo = 0; xo < ow; ++xo) {
                            const int ix = xo * s - pad + kj;
                            if (ix < 0 || ix >= w) continue;
                            db[(static_cast<std::size_t>(c) * h + iy) * w + ix] +=
                                src[static_cast<std::size_t>(y) * ow + xo];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void connected_forward(BasicLayer<T>& l, std::span<const T> x, std::size_t batch, Pass pass) {
    const auto n = static_cast<Eigen::Index>(l.in.size());
    const auto o = static_cast<Eigen::Index>(l.out.size());
    const auto b = static_cast<Eigen::Index>(batch);
    // z is outputs x batch so batch norm sees the same channels x m layout as conv.
    l.z.resize(static_cast<std::size_t>(o) * batch);
    ConstMatMap<T> wm(l.param(Param::kWeights).data(), o, n);
    ConstMatMap<T> xm(x.data(), b, n);
    MatMap<T> zm(l.z.data(), o, b);
    zm.noalias() = wm * xm.transpose();

    normalize_forward(l, static_cast<std::size_t>(o), batch);
    l.output.resize(batch * l.out.size());
    for (Eigen::Index j = 0; j < o; ++j) {
        for (Eigen::Index i = 0; i < b; ++i) {
            l.output[static_cast<std::size_t>(i * o + j)] =
                activate(l.activation, l.y[static_cast<std::size_t>(j * b + i)]);
        }
    }
    if (pass == Pass::kTrain) {
        fold_statistics(l);
    }
}

template <typename T>
void connected_backward(BasicLayer<T>& l, std::span<const T> x, std::size_t batch, T* prev_delta) {
    const auto n = static_cast<Eigen::Index>(l.in.size());
    const auto o = static_cast<Eigen::Index>(l.out.size());
    const auto b = static_cast<Eigen::Index>(batch);
    std::vector<T> dz = normalize_backward(l, batch, static_cast<std::size_t>(o), 1);
    ConstMatMap<T> dzm(dz.data(), o, b);
    ConstMatMap<T> xm(x.data(), b, n);
    MatMap<T> gw(l.grad(Param::kWeights).data(), o, n);
    gw.noalias() = dzm * xm;
    if (prev_delta != nullptr) {
        ConstMatMap<T> wm(l.param(Param::kWeights).data(), o, n);
        MatMap<T> dx(prev_delta, b, n);
        dx.noalias() += dzm.transpose() * wm;
    }
}

template <typename T>
void maxpool_forward(BasicLayer<T>& l, std::span<const T> x, std::size_t batch) {
    const int c_n = l.in.channels, h = l.in.height, w = l.in.width;
    const int oh = l.out.height, ow = l.out.width;
    const int off = pool_offset(l.size);
    l.output.resize(batch * l.out.size());
    l.argmax.resize(l.output.size());
    std::size_t o = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        for (int c = 0; c < c_n; ++c) {
            const std::size_t plane = (b * c_n + c) * static_cast<std::size_t>(h) * w;
            for (int y = 0; y < oh; ++y) {
                for (int xo = 0; xo < ow; ++xo, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_i = plane;
                    for (int i = 0; i < l.size; ++i) {
                        const int iy = off + y * l.stride + i;
                        if (iy < 0 || iy >= h) continue;
                        for (int j = 0; j < l.size; ++j) {
                            const int ix = off + xo * l.stride + j;
                            if (ix < 0 || ix >= w) continue;
                            const std::size_t idx = plane + static_cast<std::size_t>(iy) * w + ix;
                            if (x[idx] > best) {
                                best = x[idx];
                                best_i = idx;
                            }
                        }
                    }
                    l.output[o] = best;
                    l.argmax[o] = best_i;
                }
            }
        }
    }
}

template <typename T>
double softmax_forward(BasicLayer<T>& l, std::span<const T> x, const BasicBatch<T>& batch) {
    const std::size_t n = l.in.size();
    l.output.resize(batch.size * n);
    double loss = 0.0;
    for (std::size_t b = 0; b < batch.size; ++b) {
        const T* in = x.data() + b * n;
        T* out = l.output.data() + b * n;
        const T mx = *std::max_element(in, in + n);
        T sum = 0;
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = std::exp(in[i] - mx);
            sum += out[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            out[i] /= sum;
        }
        if (!batch.labels.empty()) {
            const auto label = batch.label(b);
            for (std::size_t i = 0; i < n; ++i) {
                if (label[i] != T(0)) {
                    const T p = std::max(out[i], std::numeric_limits<T>::min());
                    loss -= static_cast<double>(label[i]) * std::log(static_cast<double>(p));
                }
            }
        }
    }
    return batch.size == 0 ? 0.0 : loss / static_cast<double>(batch.size);
}

template <typename T>
std::span<const T> layer_input(const BasicModel<T>& m, const BasicBatch<T>& batch, std::size_t i) {
    return i == 0 ? std::span<const T>(batch.inputs) : std::span<const T>(m.layers[i - 1].output);
}

}  // namespace

const char* to_string(LayerKind k) noexcept {
    switch (k) {
        case LayerKind::kConvolutional: return "convolutional";
        case LayerKind::kMaxPool: return "maxpool";
        case LayerKind::kConnected: return "connected";
        case LayerKind::kSoftmax: return "softmax";
    }
    return "?";
}

template <typename T>
std::size_t BasicModel<T>::parameterized_layers() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(layers.begin(), layers.end(), [](const auto& l) { return l.parameterized(); }));
}

template <typename T>
std::size_t BasicModel<T>::parameter_buffers() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.params.size();
    return n;
}

template <typename T>
std::size_t BasicModel<T>::parameter_bytes() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) {
        for (const auto& p : l.params) n += p.size() * sizeof(T);
    }
    return n;
}

template <typename T>
template <typename U>
BasicModel<U> BasicModel<T>::cast() const {
    BasicModel<U> out;
    out.input = input;
    out.layers.reserve(layers.size());
    for (const auto& l : layers) {
        BasicLayer<U> c;
        c.kind = l.kind;
        c.in = l.in;
        c.out = l.out;
        c.size = l.size;
        c.stride = l.stride;
        c.padding = l.padding;
        c.activation = l.activation;
        for (const auto& p : l.params) {
            c.params.emplace_back(p.begin(), p.end());
            c.grads.emplace_back(p.size(), U(0));
        }
        out.layers.push_back(std::move(c));
    }
    return out;
}

template <typename T>
BasicModel<T> build_model(const NetConfig& cfg, std::uint64_t seed) {
    BasicModel<T> m;
    m.input = {cfg.channels, cfg.height, cfg.width};
    SplitMix64 rng(seed);
    Shape cur = m.input;
    for (std::size_t idx = 0; idx < cfg.layers.size(); ++idx) {
        BasicLayer<T> l;
        l.in = cur;
        const auto& spec = cfg.layers[idx];
        if (const auto* c = std::get_if<ConvSpec>(&spec)) {
            l.kind = LayerKind::kConvolutional;
            l.size = c->size;
            l.stride = c->stride;
            l.padding = c->pad != 0 ? c->size / 2 : 0;
            l.activation = c->activation;
            const int oh = conv_out(cur.height, c->size, c->stride, l.padding);
            const int ow = conv_out(cur.width, c->size, c->stride, l.padding);
            if (oh <= 0 || ow <= 0) {
                throw ShapeError("layer " + std::to_string(idx) + ": kernel larger than input");
            }
            l.out = {c->filters, oh, ow};
            const std::size_t fan_in = static_cast<std::size_t>(cur.channels) * c->size * c->size;
            init_params(l, static_cast<std::size_t>(c->filters) * fan_in, static_cast<std::size_t>(c->filters),
                        fan_in, rng);
        } else if (const auto* p = std::get_if<MaxPoolSpec>(&spec)) {
            l.kind = LayerKind::kMaxPool;
            l.size = p->size;
            l.stride = p->stride;
            const int oh = pool_out(cur.height, p->size, p->stride);
            const int ow = pool_out(cur.width, p->size, p->stride);
            if (oh <= 0 || ow <= 0) {
                throw ShapeError("layer " + std::to_string(idx) + ": pool window larger than input");
            }
            l.out = {cur.channels, oh, ow};
        } else if (const auto* f = std::get_if<ConnectedSpec>(&spec)) {
            l.kind = LayerKind::kConnected;
            l.activation = f->activation;
            l.out = {f->outputs, 1, 1};
            init_params(l, static_cast<std::size_t>(f->outputs) * cur.size(), static_cast<std::size_t>(f->outputs),
                        cur.size(), rng);
        } else {
            l.kind = LayerKind::kSoftmax;
            l.out = {static_cast<int>(cur.size()), 1, 1};
        }
        cur = l.out;
        m.layers.push_back(std::move(l));
    }
    if (m.layers.empty() || m.layers.back().kind != LayerKind::kSoftmax) {
        throw ShapeError("model must end in a softmax layer");
    }
    return m;
}

template <typename T>
ForwardResult<T> forward(BasicModel<T>& m, const BasicBatch<T>& batch, Pass pass) {
    if (batch.input_dim != m.input.size() || batch.inputs.size() != batch.size * batch.input_dim) {
        throw ShapeError("batch input dimension " + std::to_string(batch.input_dim) + " does not match model input " +
                         std::to_string(m.input.size()));
    }
    if (!batch.labels.empty() && (batch.classes != m.classes() || batch.labels.size() != batch.size * batch.classes)) {
        throw ShapeError("batch has " + std::to_string(batch.classes) + " classes, model outputs " +
                         std::to_string(m.classes()));
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        auto& l = m.layers[i];
        const auto x = layer_input(m, batch, i);
        switch (l.kind) {
            case LayerKind::kConvolutional: conv_forward(l, x, batch.size, pass); break;
            case LayerKind::kConnected: connected_forward(l, x, batch.size, pass); break;
            case LayerKind::kMaxPool: maxpool_forward(l, x, batch.size); break;
            case LayerKind::kSoftmax: loss = softmax_forward(l, x, batch); break;
        }
    }
    m.cached_batch = pass == Pass::kTrain ? batch.size : 0;
    return {m.outputs(), loss};
}

template <typename T>
void backward(BasicModel<T>& m, const BasicBatch<T>& batch) {
    if (m.cached_batch == 0 || m.cached_batch != batch.size) {
        throw Error("backward() needs a training forward pass on the same batch");
    }
    if (batch.labels.size() != batch.size * m.classes()) {
        throw ShapeError("backward() needs labels");
    }
    for (auto& l : m.layers) {
        l.delta.assign(l.output.size(), T(0));
    }
    const T inv_batch = T(1) / static_cast<T>(batch.size);
    for (std::size_t idx = m.layers.size(); idx-- > 0;) {
        auto& l = m.layers[idx];
        T* prev_delta = idx == 0 ? nullptr : m.layers[idx - 1].delta.data();
        const auto x = layer_input(m, batch, idx);
        switch (l.kind) {
            case LayerKind::kSoftmax:
                // Softmax and mean cross-entropy combined: (p - y) / B.
                if (prev_delta != nullptr) {
                    for (std::size_t i = 0; i < l.output.size(); ++i) {
                        prev_delta[i] += (l.output[i] - batch.labels[i]) * inv_batch;
                    }
                }
                break;
            case LayerKind::kMaxPool:
                if (prev_delta != nullptr) {
                    for (std::size_t i = 0; i < l.output.size(); ++i) {
                        prev_delta[l.argmax[i]] += l.delta[i];
                    }
                }
                break;
            case LayerKind::kConvolutional: conv_backward(l, batch.size, prev_delta); break;
            case LayerKind::kConnected: connected_backward(l, x, batch.size, prev_delta); break;
        }
    }
}

template <typename T>
void sgd_update(BasicModel<T>& m, T lr) {
    for (auto& l : m.layers) {
        if (!l.parameterized()) continue;
        for (const Param p : {Param::kWeights, Param::kBiases, Param::kScales}) {
            auto& v = l.param(p);
            const auto& g = l.grad(p);
            for (std::size_t i = 0; i < v.size(); ++i) {
                v[i] -= lr * g[i];
            }
        }
        for (auto& g : l.grads) {
            std::fill(g.begin(), g.end(), T(0));
        }
    }
    m.cached_batch = 0;
}

template <typename T>
double train_iteration(BasicModel<T>& m, const BasicBatch<T>& batch, T lr) {
    const double loss = forward(m, batch, Pass::kTrain).loss;
    backward(m, batch);
    sgd_update(m, lr);
    return loss;
}

template <typename T>
std::size_t argmax(std::span<const T> values) {
    if (values.empty()) {
        throw ShapeError("argmax of empty vector");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

template <typename T>
std::size_t predict(BasicModel<T>& m, std::span<const T> input) {
    BasicBatch<T> b;
    b.size = 1;
    b.input_dim = input.size();
    b.inputs.assign(input.begin(), input.end());
    const auto r = forward(m, b, Pass::kInference);
    return argmax(r.outputs);
}

template <typename T>
BasicBatch<T> slice(const BasicBatch<T>& batch, std::size_t first, std::size_t count) {
    if (first > batch.size || count > batch.size - first) {
        throw ShapeError("slice out of range");
    }
    BasicBatch<T> out;
    out.size = count;
    out.input_dim = batch.input_dim;
    out.classes = batch.classes;
    out.inputs.assign(batch.inputs.begin() + static_cast<std::ptrdiff_t>(first * batch.input_dim),
                      batch.inputs.begin() + static_cast<std::ptrdiff_t>((first + count) * batch.input_dim));
    if (!batch.labels.empty()) {
        out.labels.assign(batch.labels.begin() + static_cast<std::ptrdiff_t>(first * batch.classes),
                          batch.labels.begin() + static_cast<std::ptrdiff_t>((first + count) * batch.classes));
    }
    return out;
}

template <typename T>
double evaluate_loss(BasicModel<T>& m, const BasicBatch<T>& batch, std::size_t chunk) {
    double total = 0.0;
    for (std::size_t first = 0; first < batch.size; first += chunk) {
        const auto n = std::min(chunk, batch.size - first);
        total += forward(m, slice(batch, first, n), Pass::kInference).loss * static_cast<double>(n);
    }
    return batch.size == 0 ? 0.0 : total / static_cast<double>(batch.size);
}

template <typename T>
double accuracy(BasicModel<T>& m, const BasicBatch<T>& batch, std::size_t chunk) {
    std::size_t correct = 0;
    const std::size_t k = m.classes();
    for (std::size_t first = 0; first < batch.size; first += chunk) {
        const auto n = std::min(chunk, batch.size - first);
        const auto part = slice(batch, first, n);
        const auto r = forward(m, part, Pass::kInference);
        for (std::size_t i = 0; i < n; ++i) {
            if (argmax(r.outputs.subspan(i * k, k)) == argmax(part.label(i))) ++correct;
        }
    }
    return batch.size == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(batch.size);
}

#define SEALTRAIN_INSTANTIATE(T)                                                               \
    template class BasicModel<T>;                                                              \
    template BasicModel<T> build_model<T>(const NetConfig&, std::uint64_t);                    \
    template ForwardResult<T> forward<T>(BasicModel<T>&, const BasicBatch<T>&, Pass);          \
    template void backward<T>(BasicModel<T>&, const BasicBatch<T>&);                           \
    template void sgd_update<T>(BasicModel<T>&, T);                                            \
    template double train_iteration<T>(BasicModel<T>&, const BasicBatch<T>&, T);              \
    template std::size_t predict<T>(BasicModel<T>&, std::span<const T>);                       \
    template std::size_t argmax<T>(std::span<const T>);                                        \
    template double evaluate_loss<T>(BasicModel<T>&, const BasicBatch<T>&, std::size_t);       \
    template double accuracy<T>(BasicModel<T>&, const BasicBatch<T>&, std::size_t);            \
    template BasicBatch<T> slice<T>(const BasicBatch<T>&, std::size_t, std::size_t);

SEALTRAIN_INSTANTIATE(float)
SEALTRAIN_INSTANTIATE(double)
#undef SEALTRAIN_INSTANTIATE

template BasicModel<double> BasicModel<float>::cast<double>() const;
template BasicModel<float> BasicModel<float>::cast<float>() const;
template BasicModel<float> BasicModel<double>::cast<float>() const;
template BasicModel<double> BasicModel<double>::cast<double>() const;

}  // namespace sealtrain::nn
