#pragma once

// 8-bit RGB canvas, PNG encoding, prediction panels and loss-curve plots.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "mti/metrics.hpp"
#include "mti/tensor.hpp"

namespace mti::image {

using Color = std::array<std::uint8_t, 3>;

inline constexpr Color kBlack{0, 0, 0};
inline constexpr Color kWhite{255, 255, 255};
inline constexpr Color kGray{160, 160, 160};

class Canvas {
public:
    Canvas(int width, int height, Color fill = kBlack) : w_(width), h_(height), px_(std::size_t(width) * height * 3) {
        if (width <= 0 || height <= 0) throw Error("canvas needs a positive size");
        for (std::size_t i = 0; i < px_.size(); i += 3) std::copy(fill.begin(), fill.end(), px_.begin() + i);
    }

    [[nodiscard]] int width() const { return w_; }
    [[nodiscard]] int height() const { return h_; }
    [[nodiscard]] const std::vector<std::uint8_t>& bytes() const { return px_; }

    void set(int x, int y, Color c) {
        if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
        std::copy(c.begin(), c.end(), px_.begin() + (std::size_t(y) * w_ + x) * 3);
    }

    [[nodiscard]] Color get(int x, int y) const {
        const auto i = (std::size_t(y) * w_ + x) * 3;
        return {px_[i], px_[i + 1], px_[i + 2]};
    }

    void line(int x0, int y0, int x1, int y1, Color c) {
        const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
        const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        for (;;) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) err += dy, x0 += sx;
            if (e2 <= dx) err += dx, y0 += sy;
        }
    }

    void rect(int x0, int y0, int x1, int y1, Color c) {
        line(x0, y0, x1, y0, c);
        line(x1, y0, x1, y1, c);
        line(x1, y1, x0, y1, c);
        line(x0, y1, x0, y0, c);
    }

    /// Copies an HWC image in [0, 255] (1 or 3 channels) with its top-left at (x, y).
    void blit(const RgbImage& img, int x, int y) {
        for (int r = 0; r < img.height(); ++r)
            for (int c = 0; c < img.width(); ++c) {
                Color col;
                for (int k = 0; k < 3; ++k) {
                    const float v = img(r, c, img.channels() == 1 ? 0 : k);
                    col[k] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
                }
                set(x + c, y + r, col);
            }
    }

private:
    int w_;
    int h_;
    std::vector<std::uint8_t> px_;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = ::crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

/// Encodes the canvas as an 8-bit RGB PNG (filter 0 on every row).
inline std::vector<std::uint8_t> encode_png(const Canvas& c) {
    std::vector<std::uint8_t> raw;
    raw.reserve(std::size_t(c.height()) * (c.width() * 3 + 1));
    for (int y = 0; y < c.height(); ++y) {
        raw.push_back(0);
        const auto row = c.bytes().begin() + std::size_t(y) * c.width() * 3;
        raw.insert(raw.end(), row, row + c.width() * 3);
    }
    uLongf len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> z(len);
    if (compress2(z.data(), &len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw Error("PNG compression failed");
    z.resize(len);

    std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<std::uint8_t> ihdr;
    detail::put_u32(ihdr, static_cast<std::uint32_t>(c.width()));
    detail::put_u32(ihdr, static_cast<std::uint32_t>(c.height()));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
    detail::put_chunk(out, "IHDR", ihdr);
    detail::put_chunk(out, "IDAT", z);
    detail::put_chunk(out, "IEND", {});
    return out;
}

inline void write_png(const std::filesystem::path& path, const Canvas& c) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto bytes = encode_png(c);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Gray base image with the decoded tissue mask blended on top.
inline RgbImage overlay_mask(const RgbImage& base, const RgbImage& mask_image, double alpha = 0.5) {
    const auto gray = metrics::to_gray(base);
    const auto mask = metrics::decode_mask(mask_image);
    static constexpr std::array<std::array<float, 3>, 4> kTissue{
        {{0, 0, 0}, {255, 0, 0}, {0, 0, 255}, {0, 255, 0}}};
    RgbImage out(base.height(), base.width(), 3);
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) {
            const int t = mask(y, x);
            for (int c = 0; c < 3; ++c)
                out(y, x, c) = t == kBackground ? gray(y, x)
                                                : static_cast<float>((1 - alpha) * gray(y, x) + alpha * kTissue[t][c]);
        }
    return out;
}

/// Row of tiles: input, then for each task target and prediction.
/// Segmentation tiles are shown as mask overlays on the input.
inline Canvas render_panel(const RgbImage& input, const std::vector<RgbImage>& targets,
                           const std::vector<RgbImage>& predictions, const std::vector<bool>& segmentation) {
    if (targets.size() != predictions.size() || targets.size() != segmentation.size())
        throw Error("panel needs one target and prediction per task");
    const int gap = 4, s = input.height();
    const int tiles = 1 + 2 * static_cast<int>(targets.size());
    Canvas c(tiles * input.width() + (tiles + 1) * gap, s + 2 * gap, kGray);
    int x = gap;
    auto place = [&](const RgbImage& img) {
        c.blit(img, x, gap);
        x += input.width() + gap;
    };
    place(input);
    for (std::size_t t = 0; t < targets.size(); ++t) {
        place(segmentation[t] ? overlay_mask(input, targets[t]) : targets[t]);
        place(segmentation[t] ? overlay_mask(input, predictions[t]) : predictions[t]);
    }
    return c;
}

struct Series {
    std::vector<double> y;
    Color color;
};

/// Line plot of several series against index (epoch); y axis spans the data.
inline Canvas plot_lines(const std::vector<Series>& series, int width = 480, int height = 320) {
    Canvas c(width, height, kWhite);
    const int left = 30, right = width - 10, top = 10, bottom = height - 25;
    c.rect(left, top, right, bottom, kBlack);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    std::size_t n = 0;
    for (const auto& s : series) {
        n = std::max(n, s.y.size());
        for (double v : s.y)
            if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    }
    if (n == 0 || !std::isfinite(lo)) return c;
    if (hi - lo < 1e-12) hi = lo + 1.0;
    // tick marks at quarter intervals on both axes
    for (int q = 0; q <= 4; ++q) {
        const int ty = bottom - (bottom - top) * q / 4, tx = left + (right - left) * q / 4;
        c.line(left - 4, ty, left, ty, kBlack);
        c.line(tx, bottom, tx, bottom + 4, kBlack);
    }
    auto px = [&](std::size_t i) {
        return left + static_cast<int>(std::lround(n > 1 ? double(i) / double(n - 1) * (right - left) : 0.0));
    };
    auto py = [&](double v) { return bottom - static_cast<int>(std::lround((v - lo) / (hi - lo) * (bottom - top))); };
    for (const auto& s : series)
        for (std::size_t i = 1; i < s.y.size(); ++i)
            if (std::isfinite(s.y[i - 1]) && std::isfinite(s.y[i]))
                c.line(px(i - 1), py(s.y[i - 1]), px(i), py(s.y[i]), s.color);
    return c;
}

}  // namespace mti::image
