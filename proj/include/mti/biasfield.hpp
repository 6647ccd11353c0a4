#pragma once

// Smooth multiplicative intensity-inhomogeneity fields.
//
// A field is a combination of the 2-D Legendre products of total order <= 2
// over normalized coordinates u, v in [-1, 1] (u along width, v along height):
//
//   basis = {1, u, v, P2(u), u*v, P2(v)},   P2(t) = (3t^2 - 1) / 2
//
// Every basis term except the constant is bounded by 1 in magnitude on the
// square, so dividing the non-constant part by the L1 norm of its
// coefficients bounds it to [-1, 1]. The constant term is dropped (centering)
// and the result is mapped to 1 + amplitude * normalized, which keeps the
// gain inside [1 - amplitude, 1 + amplitude].

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "mti/tensor.hpp"

namespace mti::bias {

inline constexpr int kFieldCount = 8;
inline constexpr int kBasisSize = 6;
inline constexpr double kDefaultAmplitude = 0.3;

using Coefficients = std::array<double, kBasisSize>;
using CoefficientTable = std::array<Coefficients, kFieldCount>;

/// Frozen generating coefficients for field ids 1..8, ordered as the basis above.
inline constexpr CoefficientTable kDefaultCoefficients{{
    {1.0, 0.8, 0.3, 0.0, 0.0, 0.0},
    {1.0, -0.4, 0.9, 0.0, 0.0, 0.0},
    {1.0, 0.0, 0.0, 0.6, 0.0, 0.6},
    {1.0, 0.0, 0.0, -0.6, 0.0, -0.6},
    {1.0, 0.3, 0.0, 0.0, 0.7, 0.0},
    {1.0, 0.5, -0.5, 0.4, 0.0, -0.3},
    {1.0, -0.6, -0.3, 0.0, -0.4, 0.5},
    {1.0, 0.2, 0.6, 0.5, 0.3, 0.2},
}};

enum class Mode { multiplicative, additive };

inline Mode parse_mode(std::string_view s) {
    if (s == "multiplicative") return Mode::multiplicative;
    if (s == "additive") return Mode::additive;
    throw Error("unknown bias mode '" + std::string(s) + "'");
}

inline std::string_view to_string(Mode m) { return m == Mode::additive ? "additive" : "multiplicative"; }

struct BiasField {
    int field_id = 0;
    Plane<double> values;
    Coefficients coeffs{};
};

struct FieldOptions {
    double amplitude = kDefaultAmplitude;
    CoefficientTable table = kDefaultCoefficients;
};

/// Evaluates the six basis terms at normalized coordinates (u, v).
inline Coefficients basis(double u, double v) {
    return {1.0, u, v, 0.5 * (3.0 * u * u - 1.0), u * v, 0.5 * (3.0 * v * v - 1.0)};
}

/// Normalized coordinate of pixel `i` on an axis of length `n`.
inline double axis_coordinate(int i, int n) { return n == 1 ? 0.0 : -1.0 + 2.0 * i / (n - 1); }

inline BiasField generate_bias_field(int field_id, int height, int width, const FieldOptions& opts = {}) {
    if (field_id < 1 || field_id > kFieldCount)
        throw Error("bias field id " + std::to_string(field_id) + " outside 1..8");
    if (height <= 0 || width <= 0) throw Error("bias field dimensions must be positive");
    if (!(opts.amplitude >= 0.0 && opts.amplitude < 1.0)) throw Error("bias amplitude must lie in [0, 1)");

    BiasField field{field_id, Plane<double>(height, width), opts.table[static_cast<std::size_t>(field_id - 1)]};
    double norm = 0.0;
    for (int i = 1; i < kBasisSize; ++i) norm += std::abs(field.coeffs[i]);

    for (int y = 0; y < height; ++y) {
        const double v = axis_coordinate(y, height);
        for (int x = 0; x < width; ++x) {
            const auto b = basis(axis_coordinate(x, width), v);
            double s = 0.0;
            for (int i = 1; i < kBasisSize; ++i) s += field.coeffs[i] * b[i];
            field.values(y, x) = norm > 0.0 ? 1.0 + opts.amplitude * s / norm : 1.0;
        }
    }
    return field;
}

/// Applies a field to an intensity slice in [0, 255].
template <typename T>
Plane<T> contaminate(const Plane<T>& slice, const BiasField& field, Mode mode = Mode::multiplicative) {
    if (slice.height() != field.values.height() || slice.width() != field.values.width())
        throw Error("bias field shape does not match slice");
    Plane<T> out(slice.height(), slice.width());
    auto src = slice.values();
    auto gain = field.values.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        const double g = gain[i];
        const double v = mode == Mode::multiplicative ? src[i] * g : src[i] + 255.0 * (g - 1.0);
        dst[i] = static_cast<T>(std::clamp(v, 0.0, 255.0));
    }
    return out;
}

/// Reads an override table: a JSON array of 8 arrays with 6 numbers each.
inline CoefficientTable load_coefficient_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open coefficient table " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("coefficient table " + path.string() + ": " + e.what());
    }
    if (!j.is_array() || j.size() != kFieldCount) throw Error("coefficient table must hold 8 rows");
    CoefficientTable table{};
    for (std::size_t r = 0; r < kFieldCount; ++r) {
        if (!j[r].is_array() || j[r].size() != kBasisSize) throw Error("coefficient table rows must hold 6 numbers");
        for (std::size_t c = 0; c < kBasisSize; ++c) table[r][c] = j[r][c].get<double>();
    }
    return table;
}

}  // namespace mti::bias
