#pragma once

// Slice-stack containers and their on-disk codecs.
//
// Portable raster stack (.mrs), all integers little-endian:
//   offset 0   8 bytes  magic "MTIRAS01"
//   offset 8   u32      depth (slices)
//   offset 12  u32      height
//   offset 16  u32      width
//   offset 20  u32      dtype code (1=u8, 2=i16, 3=u16, 4=i32, 5=f32, 6=f64)
//   offset 24  payload  depth*height*width elements, slice-major then row-major
//
// NIfTI-1 single-file volumes (.nii, .nii.gz) are read-only; axis x maps to
// width, y to height and z to depth.

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mti/tensor.hpp"

namespace mti {

/// depth x height x width scalar volume.
template <typename T>
class Stack {
public:
    Stack() = default;
    Stack(int d, int h, int w, T fill = T{})
        : d_(d), h_(h), w_(w), data_(static_cast<std::size_t>(d) * h * w, fill) {
        if (d < 0 || h < 0 || w < 0) throw Error("negative stack dimension");
    }

    [[nodiscard]] int depth() const { return d_; }
    [[nodiscard]] int height() const { return h_; }
    [[nodiscard]] int width() const { return w_; }
    [[nodiscard]] std::array<int, 3> dims() const { return {d_, h_, w_}; }

    T& operator()(int z, int y, int x) { return data_[(static_cast<std::size_t>(z) * h_ + y) * w_ + x]; }
    const T& operator()(int z, int y, int x) const {
        return data_[(static_cast<std::size_t>(z) * h_ + y) * w_ + x];
    }

    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    [[nodiscard]] Plane<T> slice(int z) const {
        if (z < 0 || z >= d_) throw Error("slice index out of range");
        const auto first = data_.begin() + static_cast<std::ptrdiff_t>(z) * h_ * w_;
        return Plane<T>(h_, w_, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(h_) * w_));
    }

    void set_slice(int z, const Plane<T>& p) {
        if (p.height() != h_ || p.width() != w_) throw Error("slice shape mismatch");
        std::copy(p.values().begin(), p.values().end(),
                  data_.begin() + static_cast<std::ptrdiff_t>(z) * h_ * w_);
    }

    bool operator==(const Stack&) const = default;

private:
    int d_ = 0;
    int h_ = 0;
    int w_ = 0;
    std::vector<T> data_;
};

enum class DType : std::uint32_t { u8 = 1, i16 = 2, u16 = 3, i32 = 4, f32 = 5, f64 = 6 };

inline constexpr char kRasterMagic[8] = {'M', 'T', 'I', 'R', 'A', 'S', '0', '1'};

namespace detail {

static_assert(std::endian::native == std::endian::little, "raster codecs assume a little-endian host");

inline std::size_t dtype_bytes(DType t) {
    switch (t) {
        case DType::u8: return 1;
        case DType::i16:
        case DType::u16: return 2;
        case DType::i32:
        case DType::f32: return 4;
        case DType::f64: return 8;
    }
    throw Error("unknown raster dtype code");
}

template <typename Out>
Out read_element(const unsigned char* p, DType t) {
    switch (t) {
        case DType::u8: return static_cast<Out>(*p);
        case DType::i16: { std::int16_t v; std::memcpy(&v, p, 2); return static_cast<Out>(v); }
        case DType::u16: { std::uint16_t v; std::memcpy(&v, p, 2); return static_cast<Out>(v); }
        case DType::i32: { std::int32_t v; std::memcpy(&v, p, 4); return static_cast<Out>(v); }
        case DType::f32: { float v; std::memcpy(&v, p, 4); return static_cast<Out>(v); }
        case DType::f64: { double v; std::memcpy(&v, p, 8); return static_cast<Out>(v); }
    }
    throw Error("unknown raster dtype code");
}

template <typename T>
constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, std::uint8_t>) return DType::u8;
    else if constexpr (std::is_same_v<T, std::int16_t>) return DType::i16;
    else if constexpr (std::is_same_v<T, std::uint16_t>) return DType::u16;
    else if constexpr (std::is_same_v<T, std::int32_t>) return DType::i32;
    else if constexpr (std::is_same_v<T, float>) return DType::f32;
    else if constexpr (std::is_same_v<T, double>) return DType::f64;
    else static_assert(sizeof(T) == 0, "unsupported raster element type");
}

inline std::uint32_t read_u32(const unsigned char* p) {
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    std::vector<unsigned char> bytes;
    if (ext == ".gz") {
        gzFile f = gzopen(path.string().c_str(), "rb");
        if (!f) throw Error("cannot open " + path.string());
        unsigned char buf[1 << 16];
        int n = 0;
        while ((n = gzread(f, buf, sizeof buf)) > 0) bytes.insert(bytes.end(), buf, buf + n);
        const bool failed = n < 0;
        gzclose(f);
        if (failed) throw Error("corrupt gzip stream in " + path.string());
        return bytes;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return bytes;
}

template <typename T>
Stack<T> decode_raster(const std::vector<unsigned char>& bytes, const std::string& name) {
    if (bytes.size() < 24 || std::memcmp(bytes.data(), kRasterMagic, 8) != 0)
        throw Error(name + ": not a raster stack (bad magic)");
    const auto d = read_u32(bytes.data() + 8);
    const auto h = read_u32(bytes.data() + 12);
    const auto w = read_u32(bytes.data() + 16);
    const auto type = static_cast<DType>(read_u32(bytes.data() + 20));
    const std::size_t elem = dtype_bytes(type);
    const std::size_t count = static_cast<std::size_t>(d) * h * w;
    if (bytes.size() != 24 + count * elem) throw Error(name + ": payload size does not match header");
    Stack<T> out(static_cast<int>(d), static_cast<int>(h), static_cast<int>(w));
    for (std::size_t i = 0; i < count; ++i) out.storage()[i] = read_element<T>(bytes.data() + 24 + i * elem, type);
    return out;
}

template <typename T>
Stack<T> decode_nifti(const std::vector<unsigned char>& bytes, const std::string& name) {
    if (bytes.size() < 352) throw Error(name + ": truncated NIfTI header");
    std::int32_t hdr_size;
    std::memcpy(&hdr_size, bytes.data(), 4);
    if (hdr_size != 348) throw Error(name + ": unsupported NIfTI header (big-endian or NIfTI-2)");
    std::int16_t dim[8];
    std::memcpy(dim, bytes.data() + 40, sizeof dim);
    std::int16_t datatype;
    std::memcpy(&datatype, bytes.data() + 70, 2);
    float vox_offset, slope, inter;
    std::memcpy(&vox_offset, bytes.data() + 108, 4);
    std::memcpy(&slope, bytes.data() + 112, 4);
    std::memcpy(&inter, bytes.data() + 116, 4);
    DType type;
    switch (datatype) {
        case 2: type = DType::u8; break;
        case 4: type = DType::i16; break;
        case 8: type = DType::i32; break;
        case 16: type = DType::f32; break;
        case 64: type = DType::f64; break;
        case 512: type = DType::u16; break;
        default: throw Error(name + ": unsupported NIfTI datatype " + std::to_string(datatype));
    }
    if (dim[0] < 2 || dim[0] > 4 || (dim[0] == 4 && dim[4] > 1)) throw Error(name + ": expected a 3-D NIfTI volume");
    const int w = dim[1], h = dim[2], d = dim[0] >= 3 ? dim[3] : 1;
    const std::size_t elem = dtype_bytes(type);
    const auto offset = static_cast<std::size_t>(vox_offset);
    const std::size_t count = static_cast<std::size_t>(d) * h * w;
    if (bytes.size() < offset + count * elem) throw Error(name + ": truncated NIfTI payload");
    const bool scaled = slope != 0.0f && std::isfinite(slope) && !(slope == 1.0f && inter == 0.0f);
    Stack<T> out(d, h, w);
    for (std::size_t i = 0; i < count; ++i) {
        double v = read_element<double>(bytes.data() + offset + i * elem, type);
        if (scaled) v = v * slope + inter;
        out.storage()[i] = static_cast<T>(v);
    }
    return out;
}

}  // namespace detail

/// Writes a stack in the portable raster format.
template <typename T>
void write_raster(const std::filesystem::path& path, const Stack<T>& stack) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(kRasterMagic, 8);
    const std::uint32_t header[4] = {static_cast<std::uint32_t>(stack.depth()),
                                     static_cast<std::uint32_t>(stack.height()),
                                     static_cast<std::uint32_t>(stack.width()),
                                     static_cast<std::uint32_t>(detail::dtype_of<T>())};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    out.write(reinterpret_cast<const char*>(stack.storage().data()),
              static_cast<std::streamsize>(stack.storage().size() * sizeof(T)));
    if (!out) throw Error("short write to " + path.string());
}

[[nodiscard]] inline bool is_nifti_path(const std::filesystem::path& path) {
    const auto s = path.filename().string();
    return s.ends_with(".nii") || s.ends_with(".nii.gz");
}

/// Reads a raster stack or NIfTI volume, converting elements to T.
template <typename T>
Stack<T> read_stack(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    if (is_nifti_path(path)) return detail::decode_nifti<T>(bytes, path.string());
    return detail::decode_raster<T>(bytes, path.string());
}

}  // namespace mti
