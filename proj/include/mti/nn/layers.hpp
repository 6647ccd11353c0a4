#pragma once

// Minimal layer set with hand-written backward passes. Every layer caches
// what its backward pass needs from the latest forward call, so a layer
// instance must not be shared between interleaved forward passes.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mti/tensor.hpp"

namespace mti::nn {

/// A trainable array and its gradient accumulator.
template <typename T>
struct Param {
    std::string name;
    std::vector<T> value;
    std::vector<T> grad;

    [[nodiscard]] std::size_t size() const { return value.size(); }
    void zero_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T{});
        else std::fill(grad.begin(), grad.end(), T{});
    }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T{});
    }
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Output extent and leading pad of a "same"-padded convolution.
struct SamePadding {
    int out = 0;
    int before = 0;
};

inline SamePadding same_padding(int in, int kernel, int stride) {
    const int out = (in + stride - 1) / stride;
    const int total = std::max((out - 1) * stride + kernel - in, 0);
    return {out, total / 2};
}

/// 2-D convolution with "same" padding. Weights are stored as a
/// (k*k*in) x out row-major matrix, rows ordered (ky, kx, cin).
template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride)
        : in_(in_ch), out_(out_ch), k_(kernel), stride_(stride) {
        if (in_ch <= 0 || out_ch <= 0 || kernel <= 0 || stride <= 0) throw Error("invalid convolution geometry");
        weight_.name = name + ".weight";
        bias_.name = name + ".bias";
        weight_.value.assign(static_cast<std::size_t>(kernel) * kernel * in_ch * out_ch, T{});
        bias_.value.assign(static_cast<std::size_t>(out_ch), T{});
    }

    /// He-normal initialisation (gain for leaky slope), zero bias.
    void initialize(std::mt19937_64& rng, double leaky_slope) {
        const double fan_in = static_cast<double>(k_) * k_ * in_;
        const double std = std::sqrt(2.0 / ((1.0 + leaky_slope * leaky_slope) * fan_in));
        std::normal_distribution<double> dist(0.0, std);
        for (auto& w : weight_.value) w = static_cast<T>(dist(rng));
        std::fill(bias_.value.begin(), bias_.value.end(), T{});
    }

    [[nodiscard]] int in_channels() const { return in_; }
    [[nodiscard]] int out_channels() const { return out_; }
    [[nodiscard]] int kernel() const { return k_; }
    [[nodiscard]] int stride() const { return stride_; }

    Param<T>& weight() { return weight_; }
    Param<T>& bias() { return bias_; }
    const Param<T>& weight() const { return weight_; }
    const Param<T>& bias() const { return bias_; }

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.channels() != in_)
            throw Error(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                        std::to_string(x.channels()));
        in_shape_ = {x.batch(), x.height(), x.width()};
        const auto py = same_padding(x.height(), k_, stride_);
        const auto px = same_padding(x.width(), k_, stride_);
        col_ = im2col(x, py, px);
        Tensor<T> y(x.batch(), py.out, px.out, out_);
        Eigen::Map<RowMatrix<T>> ym(y.data(), col_.rows(), out_);
        ym.noalias() = col_ * weights();
        ym.rowwise() += biases();
        return y;
    }

    /// Accumulates parameter gradients and returns the input gradient.
    Tensor<T> backward(const Tensor<T>& gy) {
        const auto [n, h, w] = in_shape_;
        const auto py = same_padding(h, k_, stride_);
        const auto px = same_padding(w, k_, stride_);
        if (gy.batch() != n || gy.height() != py.out || gy.width() != px.out || gy.channels() != out_)
            throw Error(weight_.name + ": gradient shape mismatch");
        weight_.ensure_grad();
        bias_.ensure_grad();
        const RowMatrix<T>& col = col_;
        Eigen::Map<const RowMatrix<T>> gm(gy.data(), col.rows(), out_);
        Eigen::Map<RowMatrix<T>> gw(weight_.grad.data(), col.cols(), out_);
        gw.noalias() += col.transpose() * gm;
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(bias_.grad.data(), out_);
        gb += gm.colwise().sum();
        const RowMatrix<T> gcol = gm * weights().transpose();
        return col2im(gcol, n, h, w, py, px);
    }

    [[nodiscard]] std::size_t parameter_count() const { return weight_.size() + bias_.size(); }

private:
    Eigen::Map<const RowMatrix<T>> weights() const {
        return {weight_.value.data(), static_cast<Eigen::Index>(k_) * k_ * in_, out_};
    }
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> biases() const { return {bias_.value.data(), out_}; }

    RowMatrix<T> im2col(const Tensor<T>& x, SamePadding py, SamePadding px) const {
        const int n = x.batch(), h = x.height(), w = x.width();
        const Eigen::Index cols = static_cast<Eigen::Index>(k_) * k_ * in_;
        RowMatrix<T> col = RowMatrix<T>::Zero(static_cast<Eigen::Index>(n) * py.out * px.out, cols);
        for (int b = 0; b < n; ++b) {
            for (int oy = 0; oy < py.out; ++oy) {
                for (int ox = 0; ox < px.out; ++ox) {
                    T* row = col.data() + ((static_cast<Eigen::Index>(b) * py.out + oy) * px.out + ox) * cols;
                    for (int ky = 0; ky < k_; ++ky) {
                        const int iy = oy * stride_ + ky - py.before;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < k_; ++kx) {
                            const int ix = ox * stride_ + kx - px.before;
                            if (ix < 0 || ix >= w) continue;
                            const T* src = &x(b, iy, ix, 0);
                            std::copy(src, src + in_, row + (ky * k_ + kx) * in_);
                        }
                    }
                }
            }
        }
        return col;
    }

    Tensor<T> col2im(const RowMatrix<T>& gcol, int n, int h, int w, SamePadding py, SamePadding px) const {
        const Eigen::Index cols = gcol.cols();
        Tensor<T> gx(n, h, w, in_);
        for (int b = 0; b < n; ++b) {
            for (int oy = 0; oy < py.out; ++oy) {
                for (int ox = 0; ox < px.out; ++ox) {
                    const T* row = gcol.data() + ((static_cast<Eigen::Index>(b) * py.out + oy) * px.out + ox) * cols;
                    for (int ky = 0; ky < k_; ++ky) {
                        const int iy = oy * stride_ + ky - py.before;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < k_; ++kx) {
                            const int ix = ox * stride_ + kx - px.before;
                            if (ix < 0 || ix >= w) continue;
                            T* dst = &gx(b, iy, ix, 0);
                            const T* src = row + (ky * k_ + kx) * in_;
                            for (int c = 0; c < in_; ++c) dst[c] += src[c];
                        }
                    }
                }
            }
        }
        return gx;
    }

    int in_ = 0;
    int out_ = 0;
    int k_ = 3;
    int stride_ = 1;
    Param<T> weight_;
    Param<T> bias_;
    std::array<int, 3> in_shape_{};  // batch, height, width of the last input
    RowMatrix<T> col_;               // im2col of the last input
};

template <typename T>
class LeakyRelu {
public:
    explicit LeakyRelu(T slope = T(0.2)) : slope_(slope) {}

    Tensor<T> forward(const Tensor<T>& x) {
        input_ = x;
        Tensor<T> y = x;
        for (T& v : y.values())
            if (v < T{}) v *= slope_;
        return y;
    }
    Tensor<T> backward(const Tensor<T>& gy) const {
        Tensor<T> gx = gy;
        auto in = input_.values();
        auto g = gx.values();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (in[i] < T{}) g[i] *= slope_;
        return gx;
    }

private:
    T slope_;
    Tensor<T> input_;
};

enum class OutputActivation { tanh, sigmoid };

inline OutputActivation parse_activation(std::string_view s) {
    if (s == "tanh") return OutputActivation::tanh;
    if (s == "sigmoid") return OutputActivation::sigmoid;
    throw Error("unknown output activation '" + std::string(s) + "'");
}
inline std::string_view to_string(OutputActivation a) { return a == OutputActivation::tanh ? "tanh" : "sigmoid"; }

template <typename T>
class Activation {
public:
    explicit Activation(OutputActivation kind = OutputActivation::tanh) : kind_(kind) {}

    Tensor<T> forward(const Tensor<T>& x) {
        output_ = x;
        for (T& v : output_.values())
            v = kind_ == OutputActivation::tanh ? std::tanh(v) : T(1) / (T(1) + std::exp(-v));
        return output_;
    }
    Tensor<T> backward(const Tensor<T>& gy) const {
        Tensor<T> gx = gy;
        auto y = output_.values();
        auto g = gx.values();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] *= kind_ == OutputActivation::tanh ? (T(1) - y[i] * y[i]) : y[i] * (T(1) - y[i]);
        return gx;
    }

private:
    OutputActivation kind_;
    Tensor<T> output_;
};

/// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
    Tensor<T> y(x.batch(), x.height() * 2, x.width() * 2, x.channels());
    for (int b = 0; b < x.batch(); ++b)
        for (int yy = 0; yy < y.height(); ++yy)
            for (int xx = 0; xx < y.width(); ++xx) {
                const T* src = &x(b, yy / 2, xx / 2, 0);
                std::copy(src, src + x.channels(), &y(b, yy, xx, 0));
            }
    return y;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& gy) {
    Tensor<T> gx(gy.batch(), gy.height() / 2, gy.width() / 2, gy.channels());
    for (int b = 0; b < gy.batch(); ++b)
        for (int yy = 0; yy < gy.height(); ++yy)
            for (int xx = 0; xx < gy.width(); ++xx) {
                const T* src = &gy(b, yy, xx, 0);
                T* dst = &gx(b, yy / 2, xx / 2, 0);
                for (int c = 0; c < gy.channels(); ++c) dst[c] += src[c];
            }
    return gx;
}

/// Channel concatenation [a, b].
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.batch() != b.batch() || a.height() != b.height() || a.width() != b.width())
        throw Error("concat spatial mismatch " + a.shape_string() + " vs " + b.shape_string());
    const int ca = a.channels(), cb = b.channels();
    Tensor<T> y(a.batch(), a.height(), a.width(), ca + cb);
    const std::size_t pixels = static_cast<std::size_t>(a.batch()) * a.height() * a.width();
    for (std::size_t p = 0; p < pixels; ++p) {
        std::copy(a.data() + p * ca, a.data() + (p + 1) * ca, y.data() + p * (ca + cb));
        std::copy(b.data() + p * cb, b.data() + (p + 1) * cb, y.data() + p * (ca + cb) + ca);
    }
    return y;
}

/// Splits a concatenated gradient back into its first `ca` channels and the rest.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, int ca) {
    const int c = g.channels(), cb = c - ca;
    Tensor<T> a(g.batch(), g.height(), g.width(), ca);
    Tensor<T> b(g.batch(), g.height(), g.width(), cb);
    const std::size_t pixels = static_cast<std::size_t>(g.batch()) * g.height() * g.width();
    for (std::size_t p = 0; p < pixels; ++p) {
        std::copy(g.data() + p * c, g.data() + p * c + ca, a.data() + p * ca);
        std::copy(g.data() + p * c + ca, g.data() + (p + 1) * c, b.data() + p * cb);
    }
    return {std::move(a), std::move(b)};
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw Error("tensor add shape mismatch");
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
}

}  // namespace mti::nn
