#pragma once

// Aggregation of metric records: mean/std tables, paired t-tests and
// boxplot summaries.

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "mti/metrics.hpp"
#include "mti/modality.hpp"

namespace mti::stats {

/// Raised when every paired difference is identical (zero variance).
class ZeroVarianceError : public Error {
public:
    ZeroVarianceError() : Error("paired samples are identical up to a constant shift (zero variance)") {}
};

struct MeanStd {
    double mean = 0;
    double std = 0;  // sample standard deviation, 0 for a single value
    std::size_t count = 0;
};

/// Two-pass mean and sample standard deviation.
inline MeanStd mean_std(const std::vector<double>& v) {
    if (v.empty()) throw Error("mean_std of empty sample");
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return {m, sd, v.size()};
}

struct TTestResult {
    double t = 0;
    int df = 0;
    double p = 1;
};

/// Two-sided paired t-test on x - y.
inline TTestResult paired_ttest(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw Error("paired t-test needs equal-length samples");
    if (x.size() < 2) throw Error("paired t-test needs at least two pairs");
    std::vector<double> d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - y[i];
    const auto ms = mean_std(d);
    if (!(ms.std > 0)) throw ZeroVarianceError();
    TTestResult r;
    r.df = static_cast<int>(d.size()) - 1;
    r.t = ms.mean / (ms.std / std::sqrt(static_cast<double>(d.size())));
    boost::math::students_t dist(r.df);
    r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
    return r;
}

// --- record grouping --------------------------------------------------------------

/// (scenario key, task name, method)
using CellKey = std::tuple<std::string, std::string, MethodVariant>;

struct SampleKey {
    std::string subject;
    int slice = 0;
    int bias_field = 0;
    auto operator<=>(const SampleKey&) const = default;
};

/// Metric values per cell, keyed by sample for pairing.
using CellValues = std::map<CellKey, std::map<std::string, std::map<SampleKey, double>>>;

inline CellValues group_records(const std::vector<metrics::MetricRecord>& records) {
    CellValues out;
    for (const auto& r : records) {
        const auto key = parse_session_key(r.session);
        auto& cell = out[{key.scenario_key(), r.task, key.method}];
        for (const auto& [name, v] : r.values) cell[name][{r.subject_id, r.slice_index, r.bias_field_id}] = v;
    }
    return out;
}

struct StatsTable {
    /// cell -> metric -> summary
    std::map<CellKey, std::map<std::string, MeanStd>> cells;
};

/// Mean and sample std over all test slices of all folds, per cell and metric.
inline StatsTable aggregate(const std::vector<metrics::MetricRecord>& records) {
    if (records.empty()) throw Error("aggregate needs at least one record");
    StatsTable table;
    for (const auto& [cell, by_metric] : group_records(records)) {
        for (const auto& [metric, values] : by_metric) {
            std::vector<double> v;
            v.reserve(values.size());
            for (const auto& [k, x] : values) v.push_back(x);
            table.cells[cell][metric] = mean_std(v);
        }
    }
    return table;
}

/// Metric compared in p-value tables: Dice for segmentation, NCC otherwise.
inline std::string comparison_metric(const std::string& task_name) {
    return task_name == "segment" ? "dice_mean" : "ncc";
}

struct MethodPair {
    MethodVariant a;
    MethodVariant b;
};

/// Column order of the p-value table.
inline constexpr std::array<MethodPair, 4> kComparedPairs{{
    {MethodVariant::unet_st, MethodVariant::cgan_st},
    {MethodVariant::unet_mt, MethodVariant::cgan_mt},
    {MethodVariant::unet_st, MethodVariant::unet_mt},
    {MethodVariant::cgan_st, MethodVariant::cgan_mt},
}};

inline constexpr double kAlpha = 0.05;

struct PValueEntry {
    std::optional<double> p;  // empty when the pair is identical
    bool identical = false;
    std::size_t pairs = 0;

    /// Cells rendered in bold: not significantly different.
    [[nodiscard]] bool not_significant() const { return identical || (p && *p > kAlpha); }
};

struct PValueRow {
    std::string scenario;
    std::string task;
    std::string metric;
    std::array<PValueEntry, 4> entries;
};

struct PValueMatrix {
    std::vector<PValueRow> rows;
    std::vector<std::string> warnings;
};

/// Values of two cells matched on (subject, slice, bias field).
inline std::pair<std::vector<double>, std::vector<double>> paired_values(const std::map<SampleKey, double>& a,
                                                                         const std::map<SampleKey, double>& b) {
    std::vector<double> x, y;
    for (const auto& [k, v] : a) {
        auto it = b.find(k);
        if (it == b.end()) continue;
        x.push_back(v);
        y.push_back(it->second);
    }
    return {x, y};
}

inline PValueEntry compare(const std::map<SampleKey, double>& a, const std::map<SampleKey, double>& b) {
    auto [x, y] = paired_values(a, b);
    PValueEntry e;
    e.pairs = x.size();
    try {
        e.p = paired_ttest(x, y).p;
    } catch (const ZeroVarianceError&) {
        e.identical = true;
    }
    return e;
}

inline PValueMatrix pvalue_matrix(const std::vector<metrics::MetricRecord>& records) {
    PValueMatrix out;
    const auto cells = group_records(records);
    std::map<std::pair<std::string, std::string>, bool> rows;
    for (const auto& [cell, _] : cells) rows[{std::get<0>(cell), std::get<1>(cell)}] = true;
    for (const auto& [row, _] : rows) {
        const auto& [scenario, task] = row;
        const std::string metric = comparison_metric(task);
        std::map<MethodVariant, const std::map<SampleKey, double>*> by_method;
        for (auto m : kAllMethods) {
            auto it = cells.find({scenario, task, m});
            if (it == cells.end()) continue;
            auto mt = it->second.find(metric);
            if (mt != it->second.end()) by_method[m] = &mt->second;
        }
        if (by_method.size() != kAllMethods.size()) {
            out.warnings.push_back("p-value row " + scenario + "/" + task + " omitted: not all four methods present");
            continue;
        }
        PValueRow r{scenario, task, metric, {}};
        for (std::size_t i = 0; i < kComparedPairs.size(); ++i) {
            try {
                r.entries[i] = compare(*by_method[kComparedPairs[i].a], *by_method[kComparedPairs[i].b]);
            } catch (const Error& e) {
                out.warnings.push_back("p-value " + scenario + "/" + task + ": " + e.what());
            }
        }
        out.rows.push_back(std::move(r));
    }
    return out;
}

// --- boxplots ---------------------------------------------------------------------

/// Quantile by linear interpolation between order statistics:
/// h = (n - 1) q, value = x[floor h] + (h - floor h)(x[floor h + 1] - x[floor h]).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw Error("quantile of empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct BoxStats {
    std::size_t count = 0;
    double median = 0;
    double q1 = 0;
    double q3 = 0;
    double whisker_low = 0;   // smallest value >= q1 - 1.5 IQR
    double whisker_high = 0;  // largest value <= q3 + 1.5 IQR
    std::vector<double> outliers;
};

inline BoxStats box_stats(std::vector<double> v) {
    if (v.empty()) throw Error("box_stats of empty group");
    std::sort(v.begin(), v.end());
    BoxStats b;
    b.count = v.size();
    b.median = quantile_sorted(v, 0.5);
    b.q1 = quantile_sorted(v, 0.25);
    b.q3 = quantile_sorted(v, 0.75);
    const double iqr = b.q3 - b.q1;
    const double lo = b.q1 - 1.5 * iqr, hi = b.q3 + 1.5 * iqr;
    b.whisker_low = b.q1;
    b.whisker_high = b.q3;
    bool any_low = false, any_high = false;
    for (double x : v) {
        if (x < lo || x > hi) {
            b.outliers.push_back(x);
            continue;
        }
        if (!any_low || x < b.whisker_low) b.whisker_low = x, any_low = true;
        if (!any_high || x > b.whisker_high) b.whisker_high = x, any_high = true;
    }
    return b;
}

struct BoxGroup {
    std::string scenario;
    std::string task;
    std::string metric;
    MethodVariant method = MethodVariant::unet_st;
    BoxStats stats;
};

/// Box summaries per (scenario, task, metric, method).
inline std::vector<BoxGroup> export_boxplot_data(const std::vector<metrics::MetricRecord>& records) {
    std::vector<BoxGroup> out;
    for (const auto& [cell, by_metric] : group_records(records)) {
        for (const auto& [metric, values] : by_metric) {
            std::vector<double> v;
            for (const auto& [k, x] : values) v.push_back(x);
            out.push_back({std::get<0>(cell), std::get<1>(cell), metric, std::get<2>(cell), box_stats(std::move(v))});
        }
    }
    return out;
}

}  // namespace mti::stats
