#pragma once

// Report bundle from a directory of completed runs: result tables in CSV and
// Markdown, the p-value table, boxplot summaries, loss-curve overlays and
// exemplary slice panels.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mti/image.hpp"
#include "mti/metrics.hpp"
#include "mti/modality.hpp"
#include "mti/scenarios.hpp"
#include "mti/stats.hpp"
#include "mti/trainer.hpp"

namespace mti::report {

namespace fs = std::filesystem;
using nlohmann::json;

/// A completed session found under the runs directory.
struct RunInfo {
    SessionKey key;
    fs::path dir;
    json manifest;
};

/// Completed manifests under `runs`, sorted by session key. Failed and
/// unreadable manifests are reported as warnings.
inline std::vector<RunInfo> collect_runs(const fs::path& runs, std::vector<std::string>& warnings) {
    if (!fs::is_directory(runs)) throw Error("runs directory " + runs.string() + " does not exist");
    std::vector<RunInfo> out;
    for (const auto& e : fs::recursive_directory_iterator(runs)) {
        if (!e.is_regular_file() || e.path().filename() != "manifest.json") continue;
        try {
            json m = scenarios::read_json(e.path());
            if (m.value("status", "") != "completed") {
                warnings.push_back(m.value("session", e.path().string()) + ": status " + m.value("status", "?") +
                                   ", skipped");
                continue;
            }
            out.push_back({parse_session_key(m.at("session").get<std::string>()), e.path().parent_path(), m});
        } catch (const std::exception& ex) {
            warnings.push_back(e.path().string() + ": " + ex.what());
        }
    }
    std::sort(out.begin(), out.end(), [](const RunInfo& a, const RunInfo& b) { return a.key < b.key; });
    return out;
}

// --- epochs -----------------------------------------------------------------------

struct EpochCell {
    int epochs = 0;
    train::StopReason reason = train::StopReason::early_stop;
    int folds = 0;
};

/// Footnote marker: "*" discriminator force stop, "-" epoch cap, none for early stop.
inline std::string stop_marker(train::StopReason r) {
    switch (r) {
        case train::StopReason::discriminator_force: return "*";
        case train::StopReason::max_epoch_force: return "-";
        case train::StopReason::early_stop: return "";
    }
    return "";
}

/// Rounded mean stop epoch over folds; the marker follows the most frequent
/// stop reason, ties resolved toward force stops.
inline EpochCell summarize_epochs(const std::vector<train::StopDecision>& stops) {
    if (stops.empty()) throw Error("no stop decisions to summarize");
    double sum = 0;
    std::map<train::StopReason, int> freq;
    for (const auto& s : stops) sum += s.epoch, ++freq[s.reason];
    EpochCell c;
    c.epochs = static_cast<int>(std::lround(sum / static_cast<double>(stops.size())));
    c.folds = static_cast<int>(stops.size());
    int best = -1;
    for (auto r : {train::StopReason::discriminator_force, train::StopReason::max_epoch_force,
                   train::StopReason::early_stop})
        if (freq[r] > best) best = freq[r], c.reason = r;
    return c;
}

/// (scenario key, task name, method) -> epoch summary from manifests.
inline std::map<stats::CellKey, EpochCell> epoch_cells(const std::vector<RunInfo>& runs) {
    std::map<stats::CellKey, std::vector<train::StopDecision>> raw;
    for (const auto& r : runs)
        for (const auto& sr : r.manifest.at("subruns"))
            for (const auto& task : sr.at("tasks"))
                raw[{r.key.scenario_key(), task.get<std::string>(), r.key.method}].push_back(
                    {train::parse_stop_reason(sr.at("stop").at("reason").get<std::string>()),
                     sr.at("stop").at("epoch").get<int>()});
    std::map<stats::CellKey, EpochCell> out;
    for (const auto& [k, v] : raw) out[k] = summarize_epochs(v);
    return out;
}

// --- formatting -------------------------------------------------------------------

inline std::string fixed(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline std::string format_mean_std(const stats::MeanStd& m) { return fixed(m.mean) + " ± " + fixed(m.std); }

inline std::string format_p(const stats::PValueEntry& e) {
    if (e.identical) return "identical";
    if (!e.p) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.5g", *e.p);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

/// Human-readable task title, e.g. "Convert T2-FLAIR to T1".
inline std::string task_title(const ScenarioSpec& s, const TaskSpec& t) {
    const std::string in = (s.contaminated ? "biased " : "") + std::string(modality_name(s.input));
    switch (t.kind) {
        case TaskKind::convert: return "Convert " + in + " to " + std::string(modality_name(*t.target));
        case TaskKind::bias_correct: return "Bias correction on " + std::string(modality_name(s.input));
        case TaskKind::segment: return "Segmentation on " + in;
    }
    return t.name();
}

// --- result tables ----------------------------------------------------------------

/// Metric rows shown per task, with their labels.
inline std::vector<std::pair<std::string, std::string>> metric_rows(const TaskSpec& t) {
    if (t.is_segmentation()) return {{"Dice", "dice_mean"}, {"FPR", "fpr"}};
    return {{"SSIM", "ssim"}, {"NCC", "ncc"}};
}

struct TableRow {
    std::string scenario;  // "3A"
    std::array<std::string, 2> task;
    std::array<std::string, 2> label;
    std::array<std::array<std::string, 4>, 2> cells;
};

/// Rows for the given scenario ids: two metric rows and one epoch row per
/// (scenario, sub), tasks side by side, methods in table column order.
inline std::vector<TableRow> result_rows(const std::vector<ScenarioSpec>& specs, const std::set<int>& ids,
                                         const stats::StatsTable& table,
                                         const std::map<stats::CellKey, EpochCell>& epochs) {
    std::vector<TableRow> rows;
    for (const auto& s : specs) {
        if (!ids.count(s.scenario_id) || s.tasks.size() != 2) continue;
        bool present = false;
        for (const auto& t : s.tasks)
            for (auto m : kAllMethods) present |= table.cells.count({s.key(), t.name(), m}) > 0;
        if (!present) continue;
        for (int r = 0; r < 3; ++r) {
            TableRow row{s.key(), {s.tasks[0].name(), s.tasks[1].name()}, {}, {}};
            for (int t = 0; t < 2; ++t) {
                const auto& task = s.tasks[static_cast<std::size_t>(t)];
                row.label[t] = r < 2 ? metric_rows(task)[static_cast<std::size_t>(r)].first : "Epochs";
                for (std::size_t mi = 0; mi < kAllMethods.size(); ++mi) {
                    const stats::CellKey key{s.key(), task.name(), kAllMethods[mi]};
                    std::string cell = "n/a";
                    if (r < 2) {
                        auto it = table.cells.find(key);
                        if (it != table.cells.end()) {
                            auto mt = it->second.find(metric_rows(task)[static_cast<std::size_t>(r)].second);
                            if (mt != it->second.end()) cell = format_mean_std(mt->second);
                        }
                    } else if (auto it = epochs.find(key); it != epochs.end()) {
                        cell = std::to_string(it->second.epochs) + stop_marker(it->second.reason);
                    }
                    row.cells[t][mi] = cell;
                }
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

inline void write_result_csv(const fs::path& path, const std::vector<TableRow>& rows) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "scenario,sub";
    for (int t = 1; t <= 2; ++t) {
        out << ",task" << t << ",task" << t << "_row";
        for (auto m : kAllMethods) out << ",task" << t << "_" << method_label(m);
    }
    out << '\n';
    for (const auto& r : rows) {
        out << r.scenario.substr(0, r.scenario.size() - 1) << ',' << r.scenario.back();
        for (int t = 0; t < 2; ++t) {
            out << ',' << r.task[t] << ',' << r.label[t];
            for (const auto& c : r.cells[t]) out << ',' << csv_field(c);
        }
        out << '\n';
    }
}

inline void write_result_markdown(std::ostream& out, const std::string& title, const std::vector<TableRow>& rows,
                                  const std::vector<ScenarioSpec>& specs) {
    out << "## " << title << "\n\n| Scen. | | ";
    for (int t = 0; t < 2; ++t)
        for (auto m : kAllMethods) out << method_label(m) << " | ";
    out << "\n|---|---|";
    for (int i = 0; i < 8; ++i) out << "---|";
    out << '\n';
    std::string last;
    for (const auto& r : rows) {
        if (r.scenario != last) {
            const auto [id, sub] = scenarios::parse_scenario_key(r.scenario);
            const auto& s = scenarios::find_scenario(specs, id, sub);
            out << "| " << id << " | " << sub << " | Task 1: " << task_title(s, s.tasks[0]) << " | | | | Task 2: "
                << task_title(s, s.tasks[1]) << " | | | |\n";
            last = r.scenario;
        }
        out << "| | | ";
        for (int t = 0; t < 2; ++t) {
            for (std::size_t i = 0; i < 4; ++i) out << (i == 0 ? r.label[t] + " " : std::string()) << r.cells[t][i] << " | ";
        }
        out << '\n';
    }
    out << "\n\\*: Discriminator wins for the 10 continuous epochs (force stop)  \n"
           "-: Reached maximum allowed epochs (force stop)  \n"
           "No sign: reached desired error loss (early stop)\n\n";
}

// --- p-value table ----------------------------------------------------------------

inline std::string pair_label(const stats::MethodPair& p) {
    return std::string(method_label(p.a)) + " vs. " + std::string(method_label(p.b));
}

struct PRow {
    std::string scenario;
    std::array<std::string, 2> task;
    std::array<std::optional<stats::PValueRow>, 2> values;
};

inline std::vector<PRow> pvalue_rows(const std::vector<ScenarioSpec>& specs, const stats::PValueMatrix& pm) {
    std::vector<PRow> rows;
    for (const auto& s : specs) {
        if (s.tasks.size() != 2) continue;
        PRow row{s.key(), {s.tasks[0].name(), s.tasks[1].name()}, {}};
        bool any = false;
        for (const auto& r : pm.rows)
            for (int t = 0; t < 2; ++t)
                if (r.scenario == s.key() && r.task == s.tasks[static_cast<std::size_t>(t)].name())
                    row.values[t] = r, any = true;
        if (any) rows.push_back(std::move(row));
    }
    return rows;
}

inline void write_pvalue_csv(const fs::path& path, const std::vector<PRow>& rows) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "scenario,sub";
    for (int t = 1; t <= 2; ++t) {
        out << ",task" << t << ",task" << t << "_metric";
        for (const auto& p : stats::kComparedPairs) out << ",task" << t << "_" << pair_label(p);
        for (const auto& p : stats::kComparedPairs) out << ",task" << t << "_" << pair_label(p) << "_not_significant";
    }
    out << '\n';
    for (const auto& r : rows) {
        out << r.scenario.substr(0, r.scenario.size() - 1) << ',' << r.scenario.back();
        for (int t = 0; t < 2; ++t) {
            out << ',' << r.task[t] << ',' << (r.values[t] ? r.values[t]->metric : "");
            for (std::size_t i = 0; i < 4; ++i) out << ',' << (r.values[t] ? format_p(r.values[t]->entries[i]) : "");
            for (std::size_t i = 0; i < 4; ++i)
                out << ',' << (r.values[t] ? (r.values[t]->entries[i].not_significant() ? "1" : "0") : "");
        }
        out << '\n';
    }
}

/// Bold exactly where the pair is not significantly different (p > 0.05).
inline std::string markdown_p(const stats::PValueEntry& e) {
    const std::string v = format_p(e);
    if (v.empty()) return "n/a";
    return e.not_significant() ? "**" + v + "**" : v;
}

inline void write_pvalue_markdown(std::ostream& out, const std::vector<PRow>& rows) {
    out << "## Paired t-test p-values\n\n| Scen. | | ";
    for (int t = 1; t <= 2; ++t)
        for (const auto& p : stats::kComparedPairs) out << "Task " << t << ": " << pair_label(p) << " | ";
    out << "\n|---|---|";
    for (int i = 0; i < 8; ++i) out << "---|";
    out << '\n';
    for (const auto& r : rows) {
        out << "| " << r.scenario.substr(0, r.scenario.size() - 1) << " | " << r.scenario.back() << " | ";
        for (int t = 0; t < 2; ++t)
            for (std::size_t i = 0; i < 4; ++i) out << (r.values[t] ? markdown_p(r.values[t]->entries[i]) : "n/a") << " | ";
        out << '\n';
    }
    out << "\nSegmentation tasks are based on Dice scores, and the rest are based on NCC. "
           "Bold: not significantly different (p > 0.05).\n\n";
}

// --- plots ------------------------------------------------------------------------

inline image::Color palette(std::size_t i) {
    static constexpr std::array<image::Color, 8> kColors{{{31, 119, 180},
                                                          {255, 127, 14},
                                                          {44, 160, 44},
                                                          {214, 39, 40},
                                                          {148, 103, 189},
                                                          {140, 86, 75},
                                                          {227, 119, 194},
                                                          {127, 127, 127}}};
    return kColors[i % kColors.size()];
}

inline void write_boxplots(const fs::path& dir, const std::vector<metrics::MetricRecord>& records) {
    fs::create_directories(dir);
    std::map<std::string, std::vector<stats::BoxGroup>> files;
    for (auto& g : stats::export_boxplot_data(records))
        files[g.scenario + "_" + g.task + "_" + g.metric].push_back(std::move(g));
    for (auto& [name, groups] : files) {
        std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.method < b.method; });
        std::ofstream out(dir / (name + ".csv"), std::ios::trunc | std::ios::binary);
        if (!out) throw Error("cannot write boxplot file " + name);
        out << "method,count,median,q1,q3,whisker_low,whisker_high,outliers\n";
        out.precision(10);
        for (const auto& g : groups) {
            out << method_label(g.method) << ',' << g.stats.count << ',' << g.stats.median << ',' << g.stats.q1 << ','
                << g.stats.q3 << ',' << g.stats.whisker_low << ',' << g.stats.whisker_high << ',';
            for (std::size_t i = 0; i < g.stats.outliers.size(); ++i) out << (i ? ";" : "") << g.stats.outliers[i];
            out << '\n';
        }
    }
}

// --- bundle -----------------------------------------------------------------------

struct ReportSummary {
    std::vector<fs::path> files;
    std::vector<std::string> warnings;
    std::size_t sessions = 0;
};

/// Renders the report bundle for every completed session under `runs`.
inline ReportSummary render_report(const fs::path& runs, const fs::path& out,
                                   const std::vector<ScenarioSpec>& specs = scenarios::builtin_scenarios()) {
    ReportSummary summary;
    const auto infos = collect_runs(runs, summary.warnings);
    if (infos.empty()) throw Error("no completed sessions under " + runs.string());
    summary.sessions = infos.size();

    std::vector<metrics::MetricRecord> records;
    for (const auto& r : infos) {
        const auto p = r.dir / r.manifest.at("artifacts").at("metrics").get<std::string>();
        if (!fs::exists(p)) {
            summary.warnings.push_back(r.key.str() + ": metrics file missing");
            continue;
        }
        auto recs = metrics::read_metrics_csv(p);
        records.insert(records.end(), recs.begin(), recs.end());
    }
    if (records.empty()) throw Error("completed sessions carry no metric records");
    fs::create_directories(out);

    const auto table = stats::aggregate(records);
    const auto epochs = epoch_cells(infos);
    const auto rows12 = result_rows(specs, {1, 2}, table, epochs);
    const auto rows345 = result_rows(specs, {3, 4, 5}, table, epochs);
    const auto pm = stats::pvalue_matrix(records);
    summary.warnings.insert(summary.warnings.end(), pm.warnings.begin(), pm.warnings.end());
    const auto prows = pvalue_rows(specs, pm);

    std::ostringstream md;
    md << "# Results\n\n" << infos.size() << " completed session(s), " << records.size() << " metric record(s).\n\n";
    if (!rows12.empty()) {
        write_result_csv(out / "table1.csv", rows12);
        summary.files.push_back(out / "table1.csv");
        write_result_markdown(md, "Scenarios 1 and 2 (mean ± std)", rows12, specs);
    }
    if (!rows345.empty()) {
        write_result_csv(out / "table2.csv", rows345);
        summary.files.push_back(out / "table2.csv");
        write_result_markdown(md, "Scenarios 3 to 5 (mean ± std)", rows345, specs);
    }
    write_pvalue_csv(out / "table3.csv", prows);
    summary.files.push_back(out / "table3.csv");
    write_pvalue_markdown(md, prows);

    write_boxplots(out / "boxplots", records);

    // loss-curve overlays per (scenario, method): every fold and sub-run
    std::map<std::pair<std::string, MethodVariant>, std::vector<const RunInfo*>> by_cell;
    for (const auto& r : infos) by_cell[{r.key.scenario_key(), r.key.method}].push_back(&r);
    for (const auto& [cell, rs] : by_cell) {
        std::vector<image::Series> series;
        std::size_t color = 0;
        for (const auto* r : rs)
            for (const auto& sr : r->manifest.at("subruns")) {
                const auto p = r->dir / sr.at("curve").get<std::string>();
                if (!fs::exists(p)) {
                    summary.warnings.push_back(r->key.str() + ": curve " + p.filename().string() + " missing, skipped");
                    continue;
                }
                image::Series s{{}, palette(color++)};
                for (const auto& e : train::read_curve_csv(p)) s.y.push_back(e.gen_l1);
                series.push_back(std::move(s));
            }
        if (series.empty()) continue;
        const auto p = out / "curves" / (cell.first + "_" + std::string(method_name(cell.second)) + ".png");
        image::write_png(p, image::plot_lines(series));
        summary.files.push_back(p);
    }

    for (const auto& r : infos) {
        const auto src = r.dir / r.manifest.at("artifacts").at("panel").get<std::string>();
        if (!fs::exists(src)) {
            summary.warnings.push_back(r.key.str() + ": panel missing, skipped");
            continue;
        }
        const auto dst = out / "panels" /
                         (r.key.scenario_key() + "_" + std::string(method_name(r.key.method)) + "_fold" +
                          std::to_string(r.key.fold) + ".png");
        fs::create_directories(dst.parent_path());
        fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
        summary.files.push_back(dst);
    }

    md << "Loss curves (training L1 per epoch, one line per fold and sub-run) are in `curves/`; "
          "boxplot summaries in `boxplots/`; exemplary slices (input, then target and prediction per task, "
          "segmentation as red/blue/green overlays for GM/WM/CSF) in `panels/`.\n";
    if (!summary.warnings.empty()) {
        md << "\n## Notices\n\n";
        for (const auto& w : summary.warnings) md << "- " << w << '\n';
    }
    std::ofstream rep(out / "report.md", std::ios::trunc | std::ios::binary);
    if (!rep) throw Error("cannot write report.md");
    rep << md.str();
    summary.files.push_back(out / "report.md");
    return summary;
}

}  // namespace mti::report
