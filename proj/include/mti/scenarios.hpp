#pragma once

// Scenario catalogue, leave-one-subject-out folds, session execution and the
// experiment matrix runner.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mti/config.hpp"
#include "mti/dataset.hpp"
#include "mti/image.hpp"
#include "mti/metrics.hpp"
#include "mti/modality.hpp"
#include "mti/nets.hpp"
#include "mti/trainer.hpp"

namespace mti::scenarios {

namespace fs = std::filesystem;
using nlohmann::json;

// --- catalogue --------------------------------------------------------------------

inline TaskSpec convert_to(Modality m) { return {TaskKind::convert, m}; }
inline const TaskSpec kBiasCorrect{TaskKind::bias_correct, std::nullopt};
inline const TaskSpec kSegment{TaskKind::segment, std::nullopt};

/// The ten (scenario, sub) specs; task 1 is listed first.
inline std::vector<ScenarioSpec> builtin_scenarios() {
    const auto F = Modality::flair, T = Modality::t1, I = Modality::ir;
    return {
        {1, 'A', F, false, {convert_to(T), convert_to(I)}},
        {1, 'B', T, false, {convert_to(F), convert_to(I)}},
        {2, 'A', F, true, {kBiasCorrect, convert_to(T)}},
        {2, 'B', T, true, {kBiasCorrect, convert_to(F)}},
        {3, 'A', F, false, {kSegment, convert_to(T)}},
        {3, 'B', T, false, {kSegment, convert_to(F)}},
        {4, 'A', F, true, {kSegment, kBiasCorrect}},
        {4, 'B', T, true, {kSegment, kBiasCorrect}},
        {5, 'A', F, true, {kSegment, convert_to(T)}},
        {5, 'B', T, true, {kSegment, convert_to(F)}},
    };
}

inline std::string describe(const ScenarioSpec& s) {
    std::string line = s.key() + "  input=" + (s.contaminated ? "biased " : "") + std::string(modality_name(s.input));
    for (std::size_t i = 0; i < s.tasks.size(); ++i) line += "  task" + std::to_string(i + 1) + "=" + s.tasks[i].name();
    return line;
}

inline const ScenarioSpec& find_scenario(const std::vector<ScenarioSpec>& specs, int id, char sub) {
    for (const auto& s : specs)
        if (s.scenario_id == id && s.sub == sub) return s;
    throw Error("unknown scenario " + std::to_string(id) + sub);
}

/// Parses "3A" (case-insensitive sub letter).
inline std::pair<int, char> parse_scenario_key(const std::string& s) {
    if (s.size() < 2 || !std::isalpha(static_cast<unsigned char>(s.back())))
        throw Error("malformed scenario '" + s + "', expected e.g. 3A");
    const std::string num = s.substr(0, s.size() - 1);
    if (num.empty() || !std::all_of(num.begin(), num.end(), [](unsigned char c) { return std::isdigit(c); }))
        throw Error("malformed scenario '" + s + "', expected e.g. 3A");
    return {std::stoi(num), static_cast<char>(std::toupper(static_cast<unsigned char>(s.back())))};
}

// --- folds ------------------------------------------------------------------------

struct Fold {
    int index = 0;
    std::vector<std::string> train;
    std::string test;
};

/// Fold k holds out subject k (input order); the rest train.
inline std::vector<Fold> loso_folds(const std::vector<std::string>& subjects) {
    if (subjects.size() < 2) throw Error("leave-one-subject-out needs at least 2 subjects");
    if (std::set<std::string>(subjects.begin(), subjects.end()).size() != subjects.size())
        throw Error("duplicate subject id in fold list");
    std::vector<Fold> folds;
    for (std::size_t k = 0; k < subjects.size(); ++k) {
        Fold f{static_cast<int>(k), {}, subjects[k]};
        for (std::size_t j = 0; j < subjects.size(); ++j)
            if (j != k) f.train.push_back(subjects[j]);
        folds.push_back(std::move(f));
    }
    return folds;
}

/// Scenario x method x fold keys, sorted.
inline std::vector<SessionKey> enumerate_sessions(const std::vector<ScenarioSpec>& specs, int n_folds,
                                                  const std::vector<MethodVariant>& methods = {kAllMethods.begin(),
                                                                                               kAllMethods.end()}) {
    if (n_folds < 1) throw Error("enumerate_sessions needs at least one fold");
    std::vector<SessionKey> keys;
    for (const auto& s : specs)
        for (auto m : methods)
            for (int f = 0; f < n_folds; ++f) keys.push_back({s.scenario_id, s.sub, f, m});
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    return keys;
}

// --- device -----------------------------------------------------------------------

/// Resolves MTI_DEVICE. Only CPU execution exists; "cpu" and "cpu:N" are accepted.
inline std::string resolve_device() {
    const char* env = std::getenv("MTI_DEVICE");
    const std::string d = env ? env : "";
    if (d.empty() || d == "cpu" || d.rfind("cpu:", 0) == 0) return d.empty() ? "cpu" : d;
    throw Error("MTI_DEVICE='" + d + "' is not available: this build runs on the CPU only");
}

// --- experiment -------------------------------------------------------------------

struct Experiment {
    config::Resolved cfg;
    std::vector<ScenarioSpec> scenarios = builtin_scenarios();
    std::vector<data::MultimodalVolume> volumes;  // stretched, fold order
    std::vector<bias::BiasField> fields;

    [[nodiscard]] std::vector<std::string> subject_ids() const {
        std::vector<std::string> ids;
        for (const auto& v : volumes) ids.push_back(v.subject_id);
        return ids;
    }

    [[nodiscard]] const data::MultimodalVolume& volume(const std::string& id) const {
        for (const auto& v : volumes)
            if (v.subject_id == id) return v;
        throw Error("subject '" + id + "' is not loaded");
    }
};

/// Subject directories under a data root, sorted.
inline std::vector<std::string> discover_subjects(const fs::path& root) {
    if (!fs::is_directory(root)) throw Error("data root " + root.string() + " is not a directory");
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw Error("no subject directories under " + root.string());
    return ids;
}

/// Synthetic subjects used by the toy profile.
inline std::vector<data::MultimodalVolume> toy_volumes(const config::Resolved& cfg) {
    std::vector<data::MultimodalVolume> out;
    for (int i = 0; i < cfg.toy_subjects; ++i)
        out.push_back(data::make_phantom("toy" + std::to_string(i + 1), cfg.toy_slices, cfg.toy_source_size,
                                         cfg.seed * 1000003ULL + static_cast<std::uint64_t>(i)));
    return out;
}

inline Experiment make_experiment(const config::Resolved& cfg) {
    Experiment e;
    e.cfg = cfg;
    std::vector<data::MultimodalVolume> raw;
    if (cfg.toy) {
        raw = toy_volumes(cfg);
    } else {
        const auto ids = cfg.subjects ? *cfg.subjects : discover_subjects(cfg.data_root);
        for (const auto& id : ids) raw.push_back(data::load_volume(cfg.data_root, id, cfg.load));
    }
    for (const auto& v : raw) e.volumes.push_back(data::stretch_intensity(v));
    (void)loso_folds(e.subject_ids());
    e.fields = data::make_bias_fields(cfg.network.slice_size, cfg.bias_fields);
    return e;
}

// --- fingerprints -----------------------------------------------------------------

class Fnv1a {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) h_ = (h_ ^ b[i]) * 1099511628211ULL;
    }
    void text(const std::string& s) {
        bytes(s.data(), s.size());
        bytes("\0", 1);
    }
    template <typename T>
    void values(std::span<const T> v) {
        bytes(v.data(), v.size_bytes());
    }
    [[nodiscard]] std::string hex() const {
        std::ostringstream os;
        os << std::hex;
        os.width(16);
        os.fill('0');
        os << h_;
        return os.str();
    }

private:
    std::uint64_t h_ = 1469598103934665603ULL;
};

/// Content hash of a sample list: metadata and every pixel of inputs and targets.
inline std::string sample_fingerprint(const std::vector<data::SliceSample>& samples) {
    Fnv1a h;
    for (const auto& s : samples) {
        h.text(s.meta.subject_id);
        h.text(s.meta.scenario_id);
        const int ints[3] = {s.meta.slice_index, s.meta.augmentation_id, s.meta.bias_field_id};
        h.bytes(ints, sizeof ints);
        for (const auto& t : s.meta.task_names) h.text(t);
        h.values<float>(s.input.values());
        for (const auto& t : s.targets) h.values<float>(t.values());
    }
    return h.hex();
}

// --- run layout -------------------------------------------------------------------

inline fs::path session_dir(const fs::path& out, const SessionKey& k) {
    return out / k.scenario_key() / std::string(method_name(k.method)) / ("fold" + std::to_string(k.fold));
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Writes via a temporary file and rename so readers never see partial JSON.
inline void write_json_atomic(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << j.dump(2) << '\n';
        if (!out) throw Error("short write on " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

/// Manifest fields that vary between identical runs.
inline json without_timing(json manifest) {
    manifest.erase("timing");
    return manifest;
}

// --- session ----------------------------------------------------------------------

struct SubRun {
    std::string name;          // "mt" or the task name
    std::vector<int> tasks;    // indices into the scenario's task list
};

inline std::vector<SubRun> subruns_for(const ScenarioSpec& spec, MethodVariant m) {
    if (is_multitask(m)) {
        SubRun r{"mt", {}};
        for (std::size_t i = 0; i < spec.tasks.size(); ++i) r.tasks.push_back(static_cast<int>(i));
        return {r};
    }
    std::vector<SubRun> out;
    for (std::size_t i = 0; i < spec.tasks.size(); ++i) out.push_back({spec.tasks[i].name(), {static_cast<int>(i)}});
    return out;
}

/// Copies samples keeping only the selected targets, in order.
inline std::vector<data::SliceSample> select_targets(const std::vector<data::SliceSample>& samples,
                                                     const std::vector<int>& keep) {
    std::vector<data::SliceSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        data::SliceSample c{s.input, {}, s.meta};
        for (int k : keep) c.targets.push_back(s.targets.at(static_cast<std::size_t>(k)));
        out.push_back(std::move(c));
    }
    return out;
}

struct SessionData {
    Fold fold;
    std::vector<data::SliceSample> train;
    std::vector<data::SliceSample> test;
    std::string fingerprint;
};

/// Training samples carry every configured augmentation; test samples only
/// the identity view (with all bias fields when the scenario is contaminated).
inline SessionData prepare_session_data(const Experiment& e, const SessionKey& key) {
    const auto& spec = find_scenario(e.scenarios, key.scenario_id, key.sub);
    const auto folds = loso_folds(e.subject_ids());
    if (key.fold < 0 || key.fold >= static_cast<int>(folds.size()))
        throw Error("fold " + std::to_string(key.fold) + " out of range for " + std::to_string(folds.size()) +
                    " subjects");
    SessionData d;
    d.fold = folds[static_cast<std::size_t>(key.fold)];
    data::BuildOptions opts;
    opts.slice_size = e.cfg.network.slice_size;
    opts.in_channels = e.cfg.network.in_channels;
    opts.augmentations = e.cfg.augmentations;
    opts.bounds = e.cfg.bounds;
    opts.bias_mode = e.cfg.bias_mode;
    std::vector<data::MultimodalVolume> train_vols;
    for (const auto& id : d.fold.train) train_vols.push_back(e.volume(id));
    d.train = data::build_samples(train_vols, spec, e.fields, opts);
    opts.augmentations = {data::AugmentationParams{}};
    d.test = data::build_samples({e.volume(d.fold.test)}, spec, e.fields, opts);
    Fnv1a h;
    h.text(sample_fingerprint(d.train));
    h.text(sample_fingerprint(d.test));
    d.fingerprint = h.hex();
    return d;
}

inline json resolved_config_json(const Experiment& e, const ScenarioSpec& spec, MethodVariant m) {
    train::TrainConfig tc = e.cfg.train;
    tc.method = is_cgan(m) ? train::Method::cgan : train::Method::unet;
    json scenario{{"key", spec.key()},
                  {"input", std::string(modality_name(spec.input))},
                  {"contaminated", spec.contaminated},
                  {"tasks", spec.task_names()}};
    json tree = e.cfg.tree;
    tree["run"].erase("workers");  // scheduling only, never affects results
    return {{"tree", tree}, {"network", nets::to_json(e.cfg.network)}, {"train", train::to_json(tc)},
            {"scenario", scenario}};
}

/// Index of the exemplary test sample: middle slice, first bias field.
inline std::size_t panel_sample(const std::vector<data::SliceSample>& test) {
    int max_slice = 0;
    for (const auto& s : test) max_slice = std::max(max_slice, s.meta.slice_index);
    for (std::size_t i = 0; i < test.size(); ++i)
        if (test[i].meta.slice_index == max_slice / 2) return i;
    return 0;
}

struct SessionResult {
    json manifest;
    std::vector<metrics::MetricRecord> records;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Trains and evaluates one session and writes its run directory. Throws on
/// failure; run_matrix turns that into a failed manifest.
inline SessionResult run_session(const Experiment& e, const SessionKey& key, const fs::path& out,
                                 const ProgressFn& progress = {}) {
    const auto started = utc_timestamp();
    const std::string device = resolve_device();
    const auto& spec = find_scenario(e.scenarios, key.scenario_id, key.sub);
    const fs::path dir = session_dir(out, key);
    SessionData d = prepare_session_data(e, key);

    json subruns = json::array();
    json epoch_seconds = json::object();
    std::vector<metrics::MetricRecord> records;
    std::vector<RgbImage> panel_targets, panel_predictions;
    std::vector<bool> panel_seg;
    const std::size_t panel_idx = panel_sample(d.test);

    for (const auto& sr : subruns_for(spec, key.method)) {
        std::vector<TaskSpec> tasks;
        for (int t : sr.tasks) tasks.push_back(spec.tasks[static_cast<std::size_t>(t)]);
        const auto train_samples = select_targets(d.train, sr.tasks);

        nets::NetworkConfig net = e.cfg.network;
        net.out_channels = 3 * static_cast<int>(sr.tasks.size());
        train::TrainConfig tc = e.cfg.train;
        tc.method = is_cgan(key.method) ? train::Method::cgan : train::Method::unet;

        auto result = train::train_session(train_samples, net, tc, [&](const train::EpochRecord& r) {
            if (progress && (r.epoch == 1 || r.epoch % 10 == 0))
                progress(key.str() + " " + sr.name + " epoch " + std::to_string(r.epoch) + " l1 " +
                         std::to_string(r.gen_l1));
        });

        const std::string curve_rel = "curves/" + sr.name + ".csv";
        const std::string ckpt_rel = "checkpoints/" + sr.name + ".ckpt";
        train::write_curve_csv(dir / curve_rel, result.curve);
        nets::save_checkpoint(dir / ckpt_rel, result.generator);

        const auto outputs = train::predict(result.generator, d.test);
        auto recs = metrics::evaluate_outputs(outputs, d.test, tasks, key.str(), sr.tasks);
        records.insert(records.end(), recs.begin(), recs.end());
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            panel_targets.push_back(d.test[panel_idx].targets[static_cast<std::size_t>(sr.tasks[t])]);
            panel_predictions.push_back(metrics::channel_range(outputs[panel_idx], 3 * static_cast<int>(t), 3));
            panel_seg.push_back(tasks[t].is_segmentation());
        }

        json secs = json::array();
        for (const auto& r : result.curve) secs.push_back(r.seconds);
        epoch_seconds[sr.name] = secs;
        subruns.push_back({{"name", sr.name},
                           {"tasks", [&] {
                                std::vector<std::string> n;
                                for (const auto& t : tasks) n.push_back(t.name());
                                return n;
                            }()},
                           {"stop", {{"reason", std::string(train::to_string(result.stop.reason))},
                                     {"epoch", result.stop.epoch}}},
                           {"final_gen_l1", result.curve.back().gen_l1},
                           {"curve", curve_rel},
                           {"checkpoint", ckpt_rel},
                           {"param_count", nets::count_parameters(result.generator)}});
    }

    metrics::write_metrics_csv(dir / "metrics.csv", records);
    image::write_png(dir / "panel.png",
                     image::render_panel(d.test[panel_idx].input, panel_targets, panel_predictions, panel_seg));

    json manifest{{"session", key.str()},
                  {"scenario", spec.key()},
                  {"method", std::string(method_name(key.method))},
                  {"fold", key.fold},
                  {"train_subjects", d.fold.train},
                  {"test_subject", d.fold.test},
                  {"device", device},
                  {"config", resolved_config_json(e, spec, key.method)},
                  {"data_fingerprint", d.fingerprint},
                  {"sample_counts", {{"train", d.train.size()}, {"test", d.test.size()}}},
                  {"subruns", subruns},
                  {"artifacts", {{"metrics", "metrics.csv"}, {"panel", "panel.png"}}},
                  {"status", "completed"},
                  {"timing", {{"started_at", started}, {"finished_at", utc_timestamp()},
                              {"epoch_seconds", epoch_seconds}}}};
    write_json_atomic(dir / "manifest.json", manifest);
    return {manifest, std::move(records)};
}

/// Rebuilds a completed session's generators from their checkpoints and
/// scores them on the session's test samples again.
inline std::vector<metrics::MetricRecord> reevaluate_session(const Experiment& e, const SessionKey& key,
                                                             const fs::path& out) {
    const fs::path dir = session_dir(out, key);
    const json manifest = read_json(dir / "manifest.json");
    if (manifest.value("status", "") != "completed") throw Error(key.str() + " has no completed run");
    const auto& spec = find_scenario(e.scenarios, key.scenario_id, key.sub);
    const SessionData d = prepare_session_data(e, key);
    if (manifest.value("data_fingerprint", "") != d.fingerprint)
        throw Error(key.str() + ": data fingerprint differs from the recorded run");
    std::vector<metrics::MetricRecord> records;
    for (const auto& sr : subruns_for(spec, key.method)) {
        const fs::path ckpt = dir / "checkpoints" / (sr.name + ".ckpt");
        const json side = read_json(ckpt.string() + ".json");
        auto gen = nets::build_unet<float>(nets::network_config_from_json(side.at("network")));
        nets::load_checkpoint(ckpt, gen);
        std::vector<TaskSpec> tasks;
        for (int t : sr.tasks) tasks.push_back(spec.tasks[static_cast<std::size_t>(t)]);
        auto recs = metrics::evaluate_session(gen, d.test, tasks, key.str(), sr.tasks);
        records.insert(records.end(), recs.begin(), recs.end());
    }
    return records;
}

// --- matrix -----------------------------------------------------------------------

struct MatrixOptions {
    int workers = 1;
    bool resume = false;
    /// Called before each session executes; throwing fails that session.
    std::function<void(const SessionKey&)> before_session;
    ProgressFn progress;
};

struct MatrixSummary {
    std::vector<SessionKey> executed;
    std::vector<SessionKey> skipped;
    std::vector<std::pair<SessionKey, std::string>> failed;
    std::map<std::string, int> stop_reasons;  // over sub-runs of executed sessions
    std::vector<fs::path> metric_files;
};

/// Status recorded in an existing manifest, or empty when there is none.
inline std::string manifest_status(const fs::path& out, const SessionKey& k) {
    const auto p = session_dir(out, k) / "manifest.json";
    if (!fs::exists(p)) return {};
    try {
        return read_json(p).value("status", "");
    } catch (const Error&) {
        return {};
    }
}

/// Runs sessions on a bounded worker pool. A failing session writes a failed
/// manifest and the matrix continues. With `resume`, completed sessions whose
/// data fingerprint and configuration still match are skipped.
inline MatrixSummary run_matrix(const std::vector<SessionKey>& keys, const Experiment& e, const fs::path& out,
                                const MatrixOptions& opts = {}) {
    if (opts.workers < 1) throw Error("run_matrix needs at least one worker");
    MatrixSummary summary;
    std::mutex mu;
    std::atomic<std::size_t> next{0};

    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= keys.size()) return;
            const SessionKey& key = keys[i];
            const fs::path dir = session_dir(out, key);
            try {
                if (opts.resume && manifest_status(out, key) == "completed") {
                    const json old = read_json(dir / "manifest.json");
                    const auto& spec = find_scenario(e.scenarios, key.scenario_id, key.sub);
                    const auto d = prepare_session_data(e, key);
                    if (old.value("data_fingerprint", "") != d.fingerprint ||
                        old.value("config", json{}) != resolved_config_json(e, spec, key.method))
                        throw Error("completed run has a different data fingerprint or configuration; "
                                    "use a fresh output directory");
                    std::lock_guard lock(mu);
                    summary.skipped.push_back(key);
                    summary.metric_files.push_back(dir / "metrics.csv");
                    continue;
                }
            } catch (const std::exception& ex) {
                std::lock_guard lock(mu);
                summary.failed.emplace_back(key, ex.what());
                continue;
            }

            const auto started = utc_timestamp();
            try {
                if (opts.before_session) opts.before_session(key);
                auto r = run_session(e, key, out, opts.progress);
                std::lock_guard lock(mu);
                summary.executed.push_back(key);
                for (const auto& sr : r.manifest["subruns"]) ++summary.stop_reasons[sr["stop"]["reason"]];
                summary.metric_files.push_back(dir / "metrics.csv");
            } catch (const std::exception& ex) {
                try {
                    write_json_atomic(dir / "manifest.json",
                                      {{"session", key.str()},
                                       {"status", "failed"},
                                       {"error", ex.what()},
                                       {"timing", {{"started_at", started}, {"finished_at", utc_timestamp()}}}});
                } catch (const std::exception&) {
                }
                std::lock_guard lock(mu);
                summary.failed.emplace_back(key, ex.what());
            }
        }
    };

    const int n = std::min<int>(opts.workers, static_cast<int>(std::max<std::size_t>(keys.size(), 1)));
    std::vector<std::thread> pool;
    for (int w = 1; w < n; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    auto by_key = [](const auto& a, const auto& b) { return a < b; };
    std::sort(summary.executed.begin(), summary.executed.end(), by_key);
    std::sort(summary.skipped.begin(), summary.skipped.end(), by_key);
    std::sort(summary.failed.begin(), summary.failed.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::sort(summary.metric_files.begin(), summary.metric_files.end());
    return summary;
}

}  // namespace mti::scenarios
