#pragma once

// Volume ingestion, intensity normalization, resampling, augmentation and
// sample assembly.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mti/biasfield.hpp"
#include "mti/modality.hpp"
#include "mti/raster_io.hpp"
#include "mti/tensor.hpp"

namespace mti::data {

namespace fs = std::filesystem;

struct MultimodalVolume {
    std::string subject_id;
    std::map<Modality, Stack<float>> modalities;
    Stack<int> labels;

    [[nodiscard]] std::array<int, 3> dims() const { return labels.dims(); }
    [[nodiscard]] int depth() const { return labels.depth(); }

    [[nodiscard]] const Stack<float>& modality(Modality m) const {
        auto it = modalities.find(m);
        if (it == modalities.end())
            throw Error("subject " + subject_id + " has no " + std::string(modality_name(m)) + " stack");
        return it->second;
    }
};

/// How raw label ids map onto the canonical tissue classes.
enum class LabelScheme {
    automatic,   // mrbrains18 for NIfTI files, canonical otherwise
    canonical,   // ids already in {0,1,2,3}
    mrbrains18,  // 0..10 challenge ids
};

struct LoadOptions {
    bool strict = true;
    std::array<int, 3> expected_dims{40, 240, 240};
    LabelScheme labels = LabelScheme::automatic;
};

inline constexpr std::array<const char*, 3> kVolumeExtensions{".mrs", ".nii.gz", ".nii"};

/// Locates `<dir>/<stem>.<ext>` for any supported extension.
inline std::optional<fs::path> find_volume_file(const fs::path& dir, std::string_view stem) {
    for (const char* ext : kVolumeExtensions) {
        auto p = dir / (std::string(stem) + ext);
        if (fs::exists(p)) return p;
    }
    return std::nullopt;
}

/// MRBrainS18 ids: 1,2 gray matter; 3,4 white matter; 5,6 CSF; 0 and 7..10 other.
inline int remap_label(int raw, LabelScheme scheme) {
    if (scheme == LabelScheme::canonical) {
        if (raw < 0 || raw > 3) throw Error("unknown label id " + std::to_string(raw));
        return raw;
    }
    switch (raw) {
        case 0: case 7: case 8: case 9: case 10: return kBackground;
        case 1: case 2: return kGrayMatter;
        case 3: case 4: return kWhiteMatter;
        case 5: case 6: return kCsf;
        default: throw Error("unknown label id " + std::to_string(raw));
    }
}

inline MultimodalVolume load_volume(const fs::path& root, const std::string& subject_id, const LoadOptions& opts = {}) {
    const fs::path dir = root / subject_id;
    if (!fs::is_directory(dir)) throw Error("subject directory not found: " + dir.string());

    MultimodalVolume vol;
    vol.subject_id = subject_id;
    for (auto m : kAllModalities) {
        auto file = find_volume_file(dir, modality_stem(m));
        if (!file) throw Error("missing " + std::string(modality_name(m)) + " file for subject " + subject_id);
        vol.modalities.emplace(m, read_stack<float>(*file));
    }
    auto label_file = find_volume_file(dir, "labels");
    if (!label_file) throw Error("missing labels file for subject " + subject_id);
    Stack<int> raw = read_stack<int>(*label_file);

    LabelScheme scheme = opts.labels;
    if (scheme == LabelScheme::automatic)
        scheme = is_nifti_path(*label_file) ? LabelScheme::mrbrains18 : LabelScheme::canonical;

    // Depth disagreement is tolerated in lenient mode by cropping to the
    // common depth; in-plane disagreement never is.
    int depth = raw.depth();
    for (const auto& [m, s] : vol.modalities) {
        if (s.height() != raw.height() || s.width() != raw.width() || s.depth() != raw.depth()) {
            const std::string msg = "dimension mismatch for subject " + subject_id + ": " +
                                    std::string(modality_name(m)) + " stack is " + std::to_string(s.depth()) +
                                    "x" + std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                                    ", labels are " + std::to_string(raw.depth()) + "x" +
                                    std::to_string(raw.height()) + "x" + std::to_string(raw.width());
            if (opts.strict || s.height() != raw.height() || s.width() != raw.width()) throw Error(msg);
        }
        depth = std::min(depth, s.depth());
    }
    if (opts.strict && raw.dims() != opts.expected_dims)
        throw Error("subject " + subject_id + " does not have the expected " + std::to_string(opts.expected_dims[0]) +
                    "x" + std::to_string(opts.expected_dims[1]) + "x" + std::to_string(opts.expected_dims[2]) +
                    " dimensions");

    auto crop = [depth](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if (s.depth() == depth) return s;
        S out(depth, s.height(), s.width());
        for (int z = 0; z < depth; ++z) out.set_slice(z, s.slice(z));
        return out;
    };
    for (auto& [m, s] : vol.modalities) s = crop(s);
    vol.labels = crop(raw);
    for (int& v : vol.labels.storage()) v = remap_label(v, scheme);
    return vol;
}

/// Writes a volume in the portable raster layout (canonical label ids).
inline void save_volume(const fs::path& root, const MultimodalVolume& vol) {
    const fs::path dir = root / vol.subject_id;
    fs::create_directories(dir);
    for (const auto& [m, s] : vol.modalities) write_raster(dir / (std::string(modality_stem(m)) + ".mrs"), s);
    write_raster(dir / "labels.mrs", vol.labels);
}

namespace detail {
inline double axis_coordinate_centered(int i, int n) { return n == 1 ? 0.0 : -1.0 + 2.0 * (i + 0.5) / n; }
}  // namespace detail

/// Synthetic head phantom: an elliptical brain with a CSF rim, a wavy gray
/// matter band, white matter core and two ventricles. Raw intensities are on
/// an arbitrary scanner-like scale (stretch before use); labels are canonical.
inline MultimodalVolume make_phantom(const std::string& subject_id, int depth, int size, std::uint64_t seed) {
    if (depth <= 0 || size <= 0) throw Error("phantom dimensions must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double ax = 0.78 + 0.06 * u(rng), ay = 0.86 + 0.06 * u(rng);
    const double phase = std::numbers::pi * u(rng);
    const double lobes = 5.0 + std::floor(3.0 * (u(rng) + 1.0));
    // tissue means per modality, indexed by label
    const std::map<Modality, std::array<double, 4>> means{
        {Modality::t1, {60.0, 440.0, 640.0, 160.0}},
        {Modality::flair, {50.0, 560.0, 420.0, 120.0}},
        {Modality::ir, {40.0, 360.0, 800.0, 80.0}},
    };
    std::normal_distribution<double> noise(0.0, 6.0);

    MultimodalVolume vol;
    vol.subject_id = subject_id;
    vol.labels = Stack<int>(depth, size, size);
    for (auto m : kAllModalities) vol.modalities.emplace(m, Stack<float>(depth, size, size));
    for (int z = 0; z < depth; ++z) {
        const double zc = depth == 1 ? 0.0 : -0.6 + 1.2 * z / (depth - 1);
        const double shrink = std::sqrt(std::max(0.2, 1.0 - zc * zc));
        for (int y = 0; y < size; ++y) {
            const double py = detail::axis_coordinate_centered(y, size);
            for (int x = 0; x < size; ++x) {
                const double px = detail::axis_coordinate_centered(x, size);
                const double r = std::hypot(px / (ax * shrink), py / (ay * shrink));
                const double angle = std::atan2(py, px);
                const double wave = 0.05 * std::sin(lobes * angle + phase + 2.0 * zc);
                int label = kBackground;
                if (r < 1.0) {
                    if (r > 0.9) label = kCsf;
                    else if (r > 0.62 + wave) label = kGrayMatter;
                    else label = kWhiteMatter;
                    const double vx = (std::abs(px) - 0.12 * shrink) / (0.07 * shrink);
                    const double vy = py / (0.22 * shrink);
                    if (vx * vx + vy * vy < 1.0) label = kCsf;
                }
                vol.labels(z, y, x) = label;
                for (auto m : kAllModalities) {
                    const double base = r < 1.0 ? means.at(m)[static_cast<std::size_t>(label)] : 0.0;
                    const double shade = 1.0 + 0.08 * px - 0.05 * py;
                    const double v = r < 1.05 ? base * shade + noise(rng) : std::abs(noise(rng));
                    vol.modalities.at(m)(z, y, x) = static_cast<float>(std::max(0.0, v));
                }
            }
        }
    }
    return vol;
}

/// Per-modality min-max rescale of the whole volume onto [0, 255].
inline MultimodalVolume stretch_intensity(const MultimodalVolume& vol) {
    MultimodalVolume out = vol;
    for (auto& [m, s] : out.modalities) {
        auto& v = s.storage();
        if (v.empty()) throw Error("empty modality stack");
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        const double mn = *lo, mx = *hi;
        if (!(mx > mn))
            throw Error("degenerate intensity range in " + std::string(modality_name(m)) + " of subject " +
                        vol.subject_id);
        const double scale = 255.0 / (mx - mn);
        for (float& x : v) x = static_cast<float>(std::clamp((x - mn) * scale, 0.0, 255.0));
    }
    return out;
}

enum class SliceKind { image, label };

namespace detail {

/// Source coordinate of output pixel `i` under half-pixel-centre resampling.
inline double source_coord(int i, int in_n, int out_n) {
    return (i + 0.5) * static_cast<double>(in_n) / out_n - 0.5;
}

template <typename T>
T sample_nearest(const Plane<T>& p, double y, double x) {
    const int iy = static_cast<int>(std::lround(y));
    const int ix = static_cast<int>(std::lround(x));
    if (iy < 0 || iy >= p.height() || ix < 0 || ix >= p.width()) return T{};
    return p(iy, ix);
}

/// Bilinear sample; samples further than half a pixel outside the frame are 0.
inline float sample_bilinear(const Slice& p, double y, double x, bool clamp_edges) {
    const int h = p.height(), w = p.width();
    if (clamp_edges) {
        y = std::clamp(y, 0.0, h - 1.0);
        x = std::clamp(x, 0.0, w - 1.0);
    } else if (y < -0.5 || y > h - 0.5 || x < -0.5 || x > w - 0.5) {
        return 0.0f;
    }
    const double fy = std::floor(y), fx = std::floor(x);
    const double ay = y - fy, ax = x - fx;
    const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
    auto at = [&](int yy, int xx) -> double {
        yy = std::clamp(yy, 0, h - 1);
        xx = std::clamp(xx, 0, w - 1);
        return p(yy, xx);
    };
    double v = (1 - ay) * (1 - ax) * at(y0, x0);
    if (ax > 0) v += (1 - ay) * ax * at(y0, x0 + 1);
    if (ay > 0) v += ay * (1 - ax) * at(y0 + 1, x0);
    if (ay > 0 && ax > 0) v += ay * ax * at(y0 + 1, x0 + 1);
    return static_cast<float>(v);
}

}  // namespace detail

/// Bilinear resize of an intensity slice.
inline Slice resize_image(const Slice& in, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw Error("resize target must be positive");
    if (in.height() == out_h && in.width() == out_w) return in;
    Slice out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const double sy = detail::source_coord(y, in.height(), out_h);
        for (int x = 0; x < out_w; ++x)
            out(y, x) = detail::sample_bilinear(in, sy, detail::source_coord(x, in.width(), out_w), true);
    }
    return out;
}

/// Nearest-neighbour resize of a label map.
inline LabelSlice resize_labels(const LabelSlice& in, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw Error("resize target must be positive");
    if (in.height() == out_h && in.width() == out_w) return in;
    LabelSlice out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min(in.height() - 1, static_cast<int>((y + 0.5) * in.height() / out_h));
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(in.width() - 1, static_cast<int>((x + 0.5) * in.width() / out_w));
            out(y, x) = in(sy, sx);
        }
    }
    return out;
}

struct AugmentationParams {
    double rotation_deg = 0.0;
    double zoom_factor = 1.0;
    std::array<double, 2> translate_xy{0.0, 0.0};  // fractions of width, height
    std::uint64_t seed = 0;

    [[nodiscard]] bool is_identity() const {
        return rotation_deg == 0.0 && zoom_factor == 1.0 && translate_xy[0] == 0.0 && translate_xy[1] == 0.0;
    }
    bool operator==(const AugmentationParams&) const = default;
};

struct AugmentationBounds {
    double max_rotation_deg = 45.0;
    double min_zoom = 0.5;
    double max_zoom = 2.0;
    double max_translate = 0.25;
};

/// The four variants applied to every slice: identity, two rotate/zoom
/// combinations and a translate/zoom-out.
inline std::vector<AugmentationParams> default_augmentations(std::uint64_t seed = 0) {
    return {
        {0.0, 1.0, {0.0, 0.0}, seed},
        {5.0, 1.0, {0.0, 0.0}, seed + 1},
        {-5.0, 1.05, {0.0, 0.0}, seed + 2},
        {0.0, 0.95, {0.03, 0.03}, seed + 3},
    };
}

/// Perturbs non-identity variants by up to `rotation_jitter_deg` degrees, seeded per variant.
inline std::vector<AugmentationParams> jitter_augmentations(std::vector<AugmentationParams> params,
                                                            double rotation_jitter_deg) {
    if (rotation_jitter_deg <= 0.0) return params;
    for (auto& p : params) {
        if (p.is_identity()) continue;
        std::mt19937_64 rng(p.seed);
        std::uniform_real_distribution<double> u(-rotation_jitter_deg, rotation_jitter_deg);
        p.rotation_deg += u(rng);
    }
    return params;
}

inline void validate(const AugmentationParams& p, const AugmentationBounds& b) {
    if (!(p.zoom_factor > 0.0)) throw Error("zoom factor must be positive");
    if (std::abs(p.rotation_deg) > b.max_rotation_deg) throw Error("rotation outside configured bounds");
    if (p.zoom_factor < b.min_zoom || p.zoom_factor > b.max_zoom) throw Error("zoom outside configured bounds");
    if (std::abs(p.translate_xy[0]) > b.max_translate || std::abs(p.translate_xy[1]) > b.max_translate)
        throw Error("translation outside configured bounds");
}

namespace detail {

/// Calls fn(out_y, out_x, src_y, src_x) for the inverse of
/// rotate -> zoom -> translate about the image centre.
template <typename Fn>
void for_each_source(int h, int w, const AugmentationParams& p, Fn&& fn) {
    const double theta = p.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    const double ty = p.translate_xy[1] * h, tx = p.translate_xy[0] * w;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // forward: q = centre + t + zoom * R * (src - centre), with R
            // counter-clockwise on screen (y axis pointing down)
            const double qy = (y - cy - ty) / p.zoom_factor;
            const double qx = (x - cx - tx) / p.zoom_factor;
            const double sx = c * qx - s * qy;
            const double sy = s * qx + c * qy;
            fn(y, x, cy + sy, cx + sx);
        }
    }
}

}  // namespace detail

inline Slice augment_image(const Slice& in, const AugmentationParams& p, const AugmentationBounds& b = {}) {
    validate(p, b);
    if (p.is_identity()) return in;
    Slice out(in.height(), in.width());
    detail::for_each_source(in.height(), in.width(), p, [&](int y, int x, double sy, double sx) {
        out(y, x) = detail::sample_bilinear(in, sy, sx, false);
    });
    return out;
}

inline LabelSlice augment_labels(const LabelSlice& in, const AugmentationParams& p, const AugmentationBounds& b = {}) {
    validate(p, b);
    if (p.is_identity()) return in;
    LabelSlice out(in.height(), in.width());
    detail::for_each_source(in.height(), in.width(), p, [&](int y, int x, double sy, double sx) {
        out(y, x) = detail::sample_nearest(in, sy, sx);
    });
    return out;
}

/// Red gray matter, blue white matter, green CSF.
inline RgbImage encode_segmentation(const LabelSlice& labels) {
    RgbImage out(labels.height(), labels.width(), 3);
    for (int y = 0; y < labels.height(); ++y) {
        for (int x = 0; x < labels.width(); ++x) {
            switch (labels(y, x)) {
                case kBackground: break;
                case kGrayMatter: out(y, x, 0) = 255.0f; break;
                case kWhiteMatter: out(y, x, 2) = 255.0f; break;
                case kCsf: out(y, x, 1) = 255.0f; break;
                default: throw Error("unknown label id " + std::to_string(labels(y, x)));
            }
        }
    }
    return out;
}

struct SampleMeta {
    std::string subject_id;
    int slice_index = 0;
    int augmentation_id = 0;
    int bias_field_id = 0;  // 0 = uncontaminated
    std::string scenario_id;
    std::vector<std::string> task_names;
};

struct SliceSample {
    RgbImage input;
    std::vector<RgbImage> targets;
    SampleMeta meta;
};

struct BuildOptions {
    int slice_size = 512;
    int in_channels = 3;
    std::vector<AugmentationParams> augmentations = default_augmentations();
    AugmentationBounds bounds{};
    bias::Mode bias_mode = bias::Mode::multiplicative;
};

/// Bias fields at the given size for ids 1..8.
inline std::vector<bias::BiasField> make_bias_fields(int size, const bias::FieldOptions& opts = {}) {
    std::vector<bias::BiasField> out;
    for (int id = 1; id <= bias::kFieldCount; ++id) out.push_back(bias::generate_bias_field(id, size, size, opts));
    return out;
}

/// Expands (stretched) volumes into samples: one per slice and augmentation,
/// times one per bias field when the scenario is contaminated.
inline std::vector<SliceSample> build_samples(const std::vector<MultimodalVolume>& volumes,
                                              const ScenarioSpec& scenario,
                                              const std::vector<bias::BiasField>& bias_fields,
                                              const BuildOptions& opts = {}) {
    if (scenario.tasks.empty() || scenario.tasks.size() > 2) throw Error("scenario must declare one or two tasks");
    if (scenario.contaminated && bias_fields.empty()) throw Error("contaminated scenario needs bias fields");
    for (const auto& f : bias_fields)
        if (f.values.height() != opts.slice_size || f.values.width() != opts.slice_size)
            throw Error("bias field size differs from slice size");
    const int size = opts.slice_size;

    std::vector<SliceSample> out;
    for (const auto& vol : volumes) {
        const auto& input_stack = vol.modality(scenario.input);
        for (const auto& t : scenario.tasks)
            if (t.kind == TaskKind::convert) (void)vol.modality(*t.target);

        for (int z = 0; z < vol.depth(); ++z) {
            const Slice input_slice = resize_image(input_stack.slice(z), size, size);
            std::vector<Slice> target_slices;
            std::optional<LabelSlice> label_slice;
            for (const auto& t : scenario.tasks) {
                if (t.kind == TaskKind::convert)
                    target_slices.push_back(resize_image(vol.modality(*t.target).slice(z), size, size));
                else if (t.kind == TaskKind::segment && !label_slice)
                    label_slice = resize_labels(vol.labels.slice(z), size, size);
            }

            for (std::size_t a = 0; a < opts.augmentations.size(); ++a) {
                const auto& aug = opts.augmentations[a];
                const Slice clean = augment_image(input_slice, aug, opts.bounds);
                std::vector<RgbImage> targets;
                std::size_t next_convert = 0;
                for (const auto& t : scenario.tasks) {
                    switch (t.kind) {
                        case TaskKind::convert:
                            targets.push_back(RgbImage::replicate(
                                augment_image(target_slices[next_convert++], aug, opts.bounds), 3));
                            break;
                        case TaskKind::bias_correct: targets.push_back(RgbImage::replicate(clean, 3)); break;
                        case TaskKind::segment:
                            targets.push_back(encode_segmentation(augment_labels(*label_slice, aug, opts.bounds)));
                            break;
                    }
                }
                SampleMeta meta{vol.subject_id, z, static_cast<int>(a), 0, scenario.key(), scenario.task_names()};
                if (!scenario.contaminated) {
                    out.push_back({RgbImage::replicate(clean, opts.in_channels), std::move(targets), std::move(meta)});
                    continue;
                }
                for (const auto& field : bias_fields) {
                    SampleMeta m = meta;
                    m.bias_field_id = field.field_id;
                    out.push_back({RgbImage::replicate(bias::contaminate(clean, field, opts.bias_mode), opts.in_channels),
                                   targets, std::move(m)});
                }
            }
        }
    }
    return out;
}

}  // namespace mti::data
