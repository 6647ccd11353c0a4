#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mti {

/// Error raised on violated shape, range or format contracts.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense 4-D array in NHWC order (batch, height, width, channels).
template <typename T>
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int h, int w, int c, T fill = T{})
        : shape_{n, h, w, c}, data_(checked_size(n, h, w, c), fill) {}

    [[nodiscard]] int batch() const { return shape_[0]; }
    [[nodiscard]] int height() const { return shape_[1]; }
    [[nodiscard]] int width() const { return shape_[2]; }
    [[nodiscard]] int channels() const { return shape_[3]; }
    [[nodiscard]] const std::array<int, 4>& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    T& operator()(int n, int y, int x, int c) { return data_[index(n, y, x, c)]; }
    const T& operator()(int n, int y, int x, int c) const { return data_[index(n, y, x, c)]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    /// Contiguous view of one batch element.
    std::span<T> item(int n) {
        const std::size_t stride = item_size();
        return {data_.data() + static_cast<std::size_t>(n) * stride, stride};
    }
    std::span<const T> item(int n) const {
        const std::size_t stride = item_size();
        return {data_.data() + static_cast<std::size_t>(n) * stride, stride};
    }
    [[nodiscard]] std::size_t item_size() const {
        return static_cast<std::size_t>(shape_[1]) * shape_[2] * shape_[3];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    [[nodiscard]] bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    [[nodiscard]] std::string shape_string() const {
        std::ostringstream os;
        os << '(' << shape_[0] << ',' << shape_[1] << ',' << shape_[2] << ',' << shape_[3] << ')';
        return os.str();
    }

    template <typename U>
    [[nodiscard]] Tensor<U> cast() const {
        Tensor<U> out(shape_[0], shape_[1], shape_[2], shape_[3]);
        std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    bool operator==(const Tensor&) const = default;

private:
    static std::size_t checked_size(int n, int h, int w, int c) {
        if (n < 0 || h < 0 || w < 0 || c < 0) throw Error("negative tensor dimension");
        return static_cast<std::size_t>(n) * h * w * c;
    }
    [[nodiscard]] std::size_t index(int n, int y, int x, int c) const {
        return ((static_cast<std::size_t>(n) * shape_[1] + y) * shape_[2] + x) * shape_[3] + c;
    }

    std::array<int, 4> shape_{0, 0, 0, 0};
    std::vector<T> data_;
};

/// Single-channel 2-D raster stored row-major.
template <typename T>
class Plane {
public:
    Plane() = default;
    Plane(int h, int w, T fill = T{}) : h_(h), w_(w), data_(static_cast<std::size_t>(check(h, w)), fill) {}
    Plane(int h, int w, std::vector<T> values) : h_(h), w_(w), data_(std::move(values)) {
        if (data_.size() != static_cast<std::size_t>(check(h, w))) throw Error("plane payload size mismatch");
    }

    [[nodiscard]] int height() const { return h_; }
    [[nodiscard]] int width() const { return w_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }

    T& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * w_ + x]; }
    const T& operator()(int y, int x) const { return data_[static_cast<std::size_t>(y) * w_ + x]; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    [[nodiscard]] bool same_shape(const Plane& o) const { return h_ == o.h_ && w_ == o.w_; }
    bool operator==(const Plane&) const = default;

private:
    static long check(int h, int w) {
        if (h < 0 || w < 0) throw Error("negative plane dimension");
        return static_cast<long>(h) * w;
    }
    int h_ = 0;
    int w_ = 0;
    std::vector<T> data_;
};

/// Multi-channel 2-D image, HWC interleaved.
template <typename T>
class Image {
public:
    Image() = default;
    Image(int h, int w, int c, T fill = T{})
        : h_(h), w_(w), c_(c), data_(static_cast<std::size_t>(h) * w * c, fill) {
        if (h < 0 || w < 0 || c < 0) throw Error("negative image dimension");
    }

    [[nodiscard]] int height() const { return h_; }
    [[nodiscard]] int width() const { return w_; }
    [[nodiscard]] int channels() const { return c_; }

    T& operator()(int y, int x, int c) { return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + c]; }
    const T& operator()(int y, int x, int c) const {
        return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + c];
    }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    [[nodiscard]] Plane<T> channel(int c) const {
        Plane<T> p(h_, w_);
        for (int y = 0; y < h_; ++y)
            for (int x = 0; x < w_; ++x) p(y, x) = (*this)(y, x, c);
        return p;
    }

    /// Replicates a plane into `c` identical channels.
    static Image replicate(const Plane<T>& p, int c) {
        Image img(p.height(), p.width(), c);
        for (int y = 0; y < p.height(); ++y)
            for (int x = 0; x < p.width(); ++x)
                for (int k = 0; k < c; ++k) img(y, x, k) = p(y, x);
        return img;
    }

    bool operator==(const Image&) const = default;

private:
    int h_ = 0;
    int w_ = 0;
    int c_ = 0;
    std::vector<T> data_;
};

using Slice = Plane<float>;
using LabelSlice = Plane<int>;
using RgbImage = Image<float>;

}  // namespace mti
