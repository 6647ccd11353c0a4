#pragma once

// Writes a completed run set without training: manifests, metric records,
// loss curves and panels with the layout produced by the session runner.

#include <random>

#include "mti/image.hpp"
#include "mti/scenarios.hpp"

namespace synthetic {

using namespace mti;

inline train::StopDecision stop_for(MethodVariant m, const TaskSpec& t, int fold) {
    if (is_cgan(m)) return {train::StopReason::discriminator_force, 40 + 3 * fold};
    if (t.is_segmentation() && is_multitask(m)) return {train::StopReason::max_epoch_force, 500};
    return {train::StopReason::early_stop, 100 + 10 * fold};
}

/// Per-method metric offset; Unet-ST and Unet-MT share a distribution.
inline double method_shift(MethodVariant m) {
    switch (m) {
        case MethodVariant::unet_st:
        case MethodVariant::unet_mt: return 0.0;
        case MethodVariant::cgan_st: return 0.05;
        case MethodVariant::cgan_mt: return 0.1;
    }
    return 0;
}

inline void write_run_set(const std::filesystem::path& out, int folds, int slices, std::uint64_t seed) {
    const auto specs = scenarios::builtin_scenarios();
    for (const auto& key : scenarios::enumerate_sessions(specs, folds)) {
        const auto& spec = scenarios::find_scenario(specs, key.scenario_id, key.sub);
        const auto dir = scenarios::session_dir(out, key);
        std::filesystem::create_directories(dir / "curves");
        std::mt19937_64 rng(seed ^ std::hash<std::string>{}(key.str()));
        std::normal_distribution<double> noise(0.0, 0.02);

        std::vector<metrics::MetricRecord> records;
        for (int s = 0; s < slices; ++s) {
            const int field = spec.contaminated ? 1 + s % 8 : 0;
            for (const auto& t : spec.tasks) {
                const double base = 0.7 + method_shift(key.method);
                std::map<std::string, double> v;
                if (t.is_segmentation()) {
                    const double d = std::clamp(base + noise(rng), 0.0, 1.0);
                    v = {{"dice_gm", d}, {"dice_wm", d}, {"dice_csf", d}, {"dice_mean", d},
                         {"fpr", std::clamp(0.1 + noise(rng), 0.0, 1.0)}};
                } else {
                    v = {{"ssim", std::clamp(base + noise(rng), -1.0, 1.0)},
                         {"ncc", std::clamp(base + 0.2 + noise(rng), -1.0, 1.0)}};
                }
                records.push_back({key.str(), t.name(), "subject" + std::to_string(key.fold), s, field, v});
            }
        }
        metrics::write_metrics_csv(dir / "metrics.csv", records);

        nlohmann::json subruns = nlohmann::json::array();
        for (const auto& sr : scenarios::subruns_for(spec, key.method)) {
            const auto stop = stop_for(key.method, spec.tasks[static_cast<std::size_t>(sr.tasks.front())], key.fold);
            train::LossCurve curve;
            for (int e = 1; e <= stop.epoch; ++e) curve.push_back({e, 0.5 / e, 0.7, 0.6, 0.01});
            train::write_curve_csv(dir / "curves" / (sr.name + ".csv"), curve);
            nlohmann::json tasks = nlohmann::json::array();
            for (int t : sr.tasks) tasks.push_back(spec.tasks[static_cast<std::size_t>(t)].name());
            subruns.push_back({{"name", sr.name},
                               {"tasks", tasks},
                               {"stop", {{"reason", train::to_string(stop.reason)}, {"epoch", stop.epoch}}},
                               {"curve", "curves/" + sr.name + ".csv"}});
        }
        image::write_png(dir / "panel.png", image::Canvas(8, 8, image::kGray));
        scenarios::write_json_atomic(dir / "manifest.json",
                                     {{"session", key.str()},
                                      {"status", "completed"},
                                      {"subruns", subruns},
                                      {"artifacts", {{"metrics", "metrics.csv"}, {"panel", "panel.png"}}}});
    }
}

}  // namespace synthetic
