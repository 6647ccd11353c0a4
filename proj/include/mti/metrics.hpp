#pragma once

// Per-slice similarity (SSIM, NCC) and segmentation (Dice, FPR) metrics.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mti/dataset.hpp"
#include "mti/modality.hpp"
#include "mti/tensor.hpp"
#include "mti/trainer.hpp"

namespace mti::metrics {

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 255.0;
};

namespace detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(size));
    const double c = (size - 1) / 2.0;
    double sum = 0;
    for (int i = 0; i < size; ++i) sum += k[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    for (double& v : k) v /= sum;
    return k;
}

/// Separable "valid" filtering of a row-major h x w array.
inline std::vector<double> filter_valid(const std::vector<double>& in, int h, int w, const std::vector<double>& k) {
    const int n = static_cast<int>(k.size());
    const int oh = h - n + 1, ow = w - n + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int i = 0; i < n; ++i) s += k[i] * in[static_cast<std::size_t>(y) * w + x + i];
            rows[static_cast<std::size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int i = 0; i < n; ++i) s += k[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

template <typename T>
void require_same(const Plane<T>& a, const Plane<T>& b, const char* what) {
    if (!a.same_shape(b)) throw Error(std::string(what) + ": shape mismatch");
}

}  // namespace detail

/// Mean local SSIM over all window positions fully inside the image.
template <typename T>
double ssim(const Plane<T>& a, const Plane<T>& b, const SsimOptions& o = {}) {
    detail::require_same(a, b, "ssim");
    const int h = a.height(), w = a.width();
    if (h < o.window || w < o.window) throw Error("ssim: image smaller than the window");
    const auto k = detail::gaussian_kernel(o.window, o.sigma);
    const std::size_t n = a.size();
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = a.values()[i];
        y[i] = b.values()[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = detail::filter_valid(x, h, w, k);
    const auto my = detail::filter_valid(y, h, w, k);
    const auto sxx = detail::filter_valid(xx, h, w, k);
    const auto syy = detail::filter_valid(yy, h, w, k);
    const auto sxy = detail::filter_valid(xy, h, w, k);
    const double c1 = std::pow(o.k1 * o.dynamic_range, 2), c2 = std::pow(o.k2 * o.dynamic_range, 2);
    double total = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cxy = sxy[i] - mx[i] * my[i];
        total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.size());
}

/// Zero-mean normalized cross-correlation over the whole slice.
template <typename T>
double ncc(const Plane<T>& a, const Plane<T>& b) {
    detail::require_same(a, b, "ncc");
    const auto av = a.values();
    const auto bv = b.values();
    const double n = static_cast<double>(av.size());
    if (av.empty()) throw Error("ncc of empty slices");
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        ma += av[i];
        mb += bv[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double da = av[i] - ma, db = bv[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0 || sbb <= 0) throw Error("ncc: zero-variance input");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Inverse of the red/blue/green tissue encoding. Pixels whose strongest
/// channel is below 128 are background; ties resolve gray > white > CSF.
inline LabelSlice decode_mask(const RgbImage& img) {
    if (img.channels() != 3) throw Error("decode_mask expects a 3-channel image");
    LabelSlice out(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const float r = img(y, x, 0), g = img(y, x, 1), b = img(y, x, 2);
            const float m = std::max({r, g, b});
            if (m < 128.0f) out(y, x) = kBackground;
            else if (r == m) out(y, x) = kGrayMatter;
            else if (b == m) out(y, x) = kWhiteMatter;
            else out(y, x) = kCsf;
        }
    return out;
}

struct DiceScores {
    double gm = 1;
    double wm = 1;
    double csf = 1;
    double mean = 1;
};

/// Per-class Dice; a class absent from both maps scores 1.
inline DiceScores dice(const LabelSlice& pred, const LabelSlice& gt) {
    detail::require_same(pred, gt, "dice");
    std::array<long, 4> inter{}, p{}, g{};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int a = pred.values()[i], b = gt.values()[i];
        if (a < 0 || a > 3 || b < 0 || b > 3) throw Error("dice: label outside 0..3");
        ++p[a];
        ++g[b];
        if (a == b) ++inter[a];
    }
    auto score = [&](int c) { return p[c] + g[c] == 0 ? 1.0 : 2.0 * inter[c] / static_cast<double>(p[c] + g[c]); };
    DiceScores d{score(kGrayMatter), score(kWhiteMatter), score(kCsf), 0};
    d.mean = (d.gm + d.wm + d.csf) / 3.0;
    return d;
}

/// FP / (FP + TN) with foreground = any tissue class; 0 when no ground-truth
/// background pixel exists.
inline double fpr(const LabelSlice& pred, const LabelSlice& gt) {
    detail::require_same(pred, gt, "fpr");
    long fp = 0, tn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (gt.values()[i] != kBackground) continue;
        if (pred.values()[i] != kBackground) ++fp;
        else ++tn;
    }
    return fp + tn == 0 ? 0.0 : static_cast<double>(fp) / static_cast<double>(fp + tn);
}

/// Channel mean of an image, used to score replicated-gray outputs.
inline Plane<float> to_gray(const RgbImage& img) {
    Plane<float> p(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            float s = 0;
            for (int c = 0; c < img.channels(); ++c) s += img(y, x, c);
            p(y, x) = s / static_cast<float>(img.channels());
        }
    return p;
}

struct MetricRecord {
    std::string session;
    std::string task;
    std::string subject_id;
    int slice_index = 0;
    int bias_field_id = 0;
    std::map<std::string, double> values;
};

/// Extracts channels [first, first + count) of an image.
inline RgbImage channel_range(const RgbImage& img, int first, int count) {
    RgbImage out(img.height(), img.width(), count);
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < count; ++c) out(y, x, c) = img(y, x, first + c);
    return out;
}

/// Metrics for one task's output against its target, both in [0, 255].
inline std::map<std::string, double> score_task(const TaskSpec& task, const RgbImage& output, const RgbImage& target,
                                                const SsimOptions& ssim_opts = {}) {
    if (task.is_segmentation()) {
        const auto p = decode_mask(output);
        const auto g = decode_mask(target);
        const auto d = dice(p, g);
        return {{"dice_gm", d.gm}, {"dice_wm", d.wm}, {"dice_csf", d.csf}, {"dice_mean", d.mean}, {"fpr", fpr(p, g)}};
    }
    const auto a = to_gray(output);
    const auto b = to_gray(target);
    return {{"ssim", ssim(a, b, ssim_opts)}, {"ncc", ncc(a, b)}};
}

/// Scores precomputed outputs (stacked task channels, [0, 255]).
/// `tasks` lists the tasks the outputs carry, in channel order.
inline std::vector<MetricRecord> evaluate_outputs(const std::vector<RgbImage>& outputs,
                                                  const std::vector<data::SliceSample>& samples,
                                                  const std::vector<TaskSpec>& tasks, const std::string& session,
                                                  const std::vector<int>& target_indices = {},
                                                  const SsimOptions& ssim_opts = {}) {
    if (outputs.size() != samples.size()) throw Error("evaluate: output count differs from sample count");
    std::vector<MetricRecord> records;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (outputs[i].channels() != 3 * static_cast<int>(tasks.size()))
            throw Error("evaluate: generator emits " + std::to_string(outputs[i].channels()) + " channels for " +
                        std::to_string(tasks.size()) + " task(s)");
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            const std::size_t ti = target_indices.empty() ? t : static_cast<std::size_t>(target_indices[t]);
            const auto out = channel_range(outputs[i], 3 * static_cast<int>(t), 3);
            records.push_back({session, tasks[t].name(), s.meta.subject_id, s.meta.slice_index, s.meta.bias_field_id,
                               score_task(tasks[t], out, s.targets.at(ti), ssim_opts)});
        }
    }
    return records;
}

/// Forwards every test sample through the generator and scores each task.
inline std::vector<MetricRecord> evaluate_session(nets::Generator<float>& gen,
                                                  const std::vector<data::SliceSample>& test_samples,
                                                  const std::vector<TaskSpec>& tasks, const std::string& session,
                                                  const std::vector<int>& target_indices = {},
                                                  const SsimOptions& ssim_opts = {}) {
    if (gen.config().out_channels != 3 * static_cast<int>(tasks.size()))
        throw Error("evaluate: generator channel layout does not match the session's tasks");
    return evaluate_outputs(train::predict(gen, test_samples), test_samples, tasks, session, target_indices, ssim_opts);
}

/// Range contract of a persisted record.
inline bool in_range(const MetricRecord& r) {
    for (const auto& [name, v] : r.values) {
        if (!std::isfinite(v)) return false;
        const bool signed_metric = name == "ssim" || name == "ncc";
        if (v < (signed_metric ? -1.0 : 0.0) - 1e-12 || v > 1.0 + 1e-12) return false;
    }
    return true;
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << "session,task,subject,slice,bias_field,metric,value\n";
    out.precision(17);
    for (const auto& r : records)
        for (const auto& [name, v] : r.values)
            out << r.session << ',' << r.task << ',' << r.subject_id << ',' << r.slice_index << ','
                << r.bias_field_id << ',' << name << ',' << v << '\n';
}

/// Reads a metrics CSV back into records (one per task/subject/slice/field).
inline std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "session,task,subject,slice,bias_field,metric,value")
        throw Error(path.string() + ": unexpected metrics header");
    std::vector<MetricRecord> records;
    std::map<std::tuple<std::string, std::string, std::string, int, int>, std::size_t> index;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 7) throw Error(path.string() + ": malformed metrics row '" + line + "'");
        const auto key = std::make_tuple(f[0], f[1], f[2], std::stoi(f[3]), std::stoi(f[4]));
        auto [it, fresh] = index.try_emplace(key, records.size());
        if (fresh) records.push_back({f[0], f[1], f[2], std::get<3>(key), std::get<4>(key), {}});
        records[it->second].values[f[5]] = std::stod(f[6]);
    }
    return records;
}

}  // namespace mti::metrics
