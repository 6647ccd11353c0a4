#pragma once

// Vocabulary shared by the data pipeline and the experiment matrix.

#include <array>
#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mti/tensor.hpp"

namespace mti {

enum class Modality { t1, flair, ir };

inline constexpr std::array<Modality, 3> kAllModalities{Modality::t1, Modality::flair, Modality::ir};

/// Display name, e.g. "T2-FLAIR".
inline std::string_view modality_name(Modality m) {
    switch (m) {
        case Modality::t1: return "T1";
        case Modality::flair: return "T2-FLAIR";
        case Modality::ir: return "T1-IR";
    }
    return "?";
}

/// File stem inside a subject directory.
inline std::string_view modality_stem(Modality m) {
    switch (m) {
        case Modality::t1: return "t1";
        case Modality::flair: return "flair";
        case Modality::ir: return "ir";
    }
    return "?";
}

inline Modality parse_modality(std::string_view s) {
    for (auto m : kAllModalities)
        if (s == modality_name(m) || s == modality_stem(m)) return m;
    throw Error("unknown modality '" + std::string(s) + "'");
}

/// Canonical tissue classes.
enum Tissue : int { kBackground = 0, kGrayMatter = 1, kWhiteMatter = 2, kCsf = 3 };

enum class TaskKind { convert, bias_correct, segment };

struct TaskSpec {
    TaskKind kind = TaskKind::convert;
    std::optional<Modality> target;  // set only for convert

    /// Stable identifier used in file names and reports, e.g. "convert_T1".
    [[nodiscard]] std::string name() const {
        switch (kind) {
            case TaskKind::convert: return "convert_" + std::string(modality_name(*target));
            case TaskKind::bias_correct: return "bias_correct";
            case TaskKind::segment: return "segment";
        }
        return "?";
    }

    [[nodiscard]] bool is_segmentation() const { return kind == TaskKind::segment; }

    bool operator==(const TaskSpec&) const = default;
};

struct ScenarioSpec {
    int scenario_id = 1;
    char sub = 'A';
    Modality input = Modality::flair;
    bool contaminated = false;
    std::vector<TaskSpec> tasks;

    /// "3A" style identifier.
    [[nodiscard]] std::string key() const { return std::to_string(scenario_id) + sub; }

    [[nodiscard]] std::vector<std::string> task_names() const {
        std::vector<std::string> out;
        for (const auto& t : tasks) out.push_back(t.name());
        return out;
    }

    bool operator==(const ScenarioSpec&) const = default;
};

/// The four compared methods: U-Net or cGAN, single-task or multitask.
enum class MethodVariant { unet_st, cgan_st, unet_mt, cgan_mt };

inline constexpr std::array<MethodVariant, 4> kAllMethods{MethodVariant::unet_st, MethodVariant::cgan_st,
                                                          MethodVariant::unet_mt, MethodVariant::cgan_mt};

inline std::string_view method_name(MethodVariant m) {
    switch (m) {
        case MethodVariant::unet_st: return "unet_st";
        case MethodVariant::cgan_st: return "cgan_st";
        case MethodVariant::unet_mt: return "unet_mt";
        case MethodVariant::cgan_mt: return "cgan_mt";
    }
    return "?";
}

/// Column label used in tables, e.g. "Unet-ST".
inline std::string_view method_label(MethodVariant m) {
    switch (m) {
        case MethodVariant::unet_st: return "Unet-ST";
        case MethodVariant::cgan_st: return "cGAN-ST";
        case MethodVariant::unet_mt: return "Unet-MT";
        case MethodVariant::cgan_mt: return "cGAN-MT";
    }
    return "?";
}

inline MethodVariant parse_method_variant(std::string_view s) {
    for (auto m : kAllMethods)
        if (s == method_name(m) || s == method_label(m)) return m;
    throw Error("unknown method '" + std::string(s) + "'");
}

inline bool is_multitask(MethodVariant m) { return m == MethodVariant::unet_mt || m == MethodVariant::cgan_mt; }
inline bool is_cgan(MethodVariant m) { return m == MethodVariant::cgan_st || m == MethodVariant::cgan_mt; }

struct SessionKey {
    int scenario_id = 1;
    char sub = 'A';
    int fold = 0;
    MethodVariant method = MethodVariant::unet_st;

    [[nodiscard]] std::string scenario_key() const { return std::to_string(scenario_id) + sub; }

    /// "3A/unet_mt/fold2"
    [[nodiscard]] std::string str() const {
        return scenario_key() + "/" + std::string(method_name(method)) + "/fold" + std::to_string(fold);
    }

    auto operator<=>(const SessionKey&) const = default;
};

inline SessionKey parse_session_key(std::string_view s) {
    const auto a = s.find('/');
    const auto b = s.find('/', a == std::string_view::npos ? a : a + 1);
    if (a == std::string_view::npos || b == std::string_view::npos || a < 2 || s.substr(b + 1, 4) != "fold")
        throw Error("malformed session key '" + std::string(s) + "'");
    SessionKey k;
    k.scenario_id = std::stoi(std::string(s.substr(0, a - 1)));
    k.sub = s[a - 1];
    k.method = parse_method_variant(s.substr(a + 1, b - a - 1));
    k.fold = std::stoi(std::string(s.substr(b + 5)));
    return k;
}

}  // namespace mti
