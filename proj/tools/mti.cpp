// mti: data preparation, bias simulation, training sessions, the experiment
// matrix, re-evaluation and reporting.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mti/biasfield.hpp"
#include "mti/config.hpp"
#include "mti/dataset.hpp"
#include "mti/image.hpp"
#include "mti/raster_io.hpp"
#include "mti/report.hpp"
#include "mti/scenarios.hpp"

namespace fs = std::filesystem;
using namespace mti;

namespace {

/// Flags shared by the configurable subcommands.
struct CommonFlags {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    bool toy = false;
    std::optional<std::string> out;
    std::optional<std::string> data_root;
    std::optional<double> lr;
    std::optional<int> batch_size;
    std::optional<int> max_epochs;
    std::optional<double> l1_weight;
    std::optional<int> workers;

    void attach(CLI::App* app) {
        app->add_option("-c,--config", config, "JSON configuration file");
        app->add_option("--set", sets, "Override a config key, e.g. --set train.batch_size=10");
        app->add_option("--seed", seed, "Seed for every random choice");
        app->add_flag("--toy", toy, "Desk-scale profile on synthetic subjects");
        app->add_option("-o,--out", out, "Output root");
        app->add_option("--data-root", data_root, "Dataset root (one directory per subject)");
        app->add_option("--lr", lr, "Adam learning rate");
        app->add_option("--batch-size", batch_size, "Mini-batch size");
        app->add_option("--max-epochs", max_epochs, "Epoch cap");
        app->add_option("--l1-weight", l1_weight, "Weight of the L1 term in the cGAN generator loss");
        app->add_option("--workers", workers, "Concurrent sessions");
    }

    [[nodiscard]] config::Resolved resolve() const {
        std::map<std::string, std::string> o;
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw Error("--set expects key=value, got '" + s + "'");
            o[s.substr(0, eq)] = s.substr(eq + 1);
        }
        auto num = [](double v) {
            std::ostringstream os;
            os.precision(17);
            os << v;
            return os.str();
        };
        if (seed) o["run.seed"] = std::to_string(*seed);
        if (toy) o["run.toy"] = "true";
        if (out) o["run.out"] = nlohmann::json(*out).dump();
        if (data_root) o["data.root"] = nlohmann::json(*data_root).dump();
        if (lr) o["train.learning_rate"] = num(*lr);
        if (batch_size) o["train.batch_size"] = std::to_string(*batch_size);
        if (max_epochs) o["train.max_epochs"] = std::to_string(*max_epochs);
        if (l1_weight) o["train.l1_weight"] = num(*l1_weight);
        if (workers) o["run.workers"] = std::to_string(*workers);
        try {
            return config::load_config(config, o);
        } catch (const Error& e) {
            throw CLI::ValidationError("configuration", e.what());
        }
    }
};

void log(const std::string& msg) { std::cerr << msg << '\n'; }

SessionKey make_key(const std::string& scenario, int fold, const std::string& method) {
    const auto [id, sub] = scenarios::parse_scenario_key(scenario);
    (void)scenarios::find_scenario(scenarios::builtin_scenarios(), id, sub);
    return {id, sub, fold, parse_method_variant(method)};
}

/// Fold count for enumeration without loading volumes.
int fold_count(const config::Resolved& cfg, std::optional<int> flag) {
    if (flag) return *flag;
    if (cfg.subjects) return static_cast<int>(cfg.subjects->size());
    if (cfg.toy) return cfg.toy_subjects;
    if (fs::is_directory(cfg.data_root)) return static_cast<int>(scenarios::discover_subjects(cfg.data_root).size());
    log("data root '" + cfg.data_root + "' not found; assuming 7 subjects");
    return 7;
}

void print_means(const std::vector<metrics::MetricRecord>& records) {
    std::map<std::pair<std::string, std::string>, std::pair<double, int>> acc;
    for (const auto& r : records)
        for (const auto& [k, v] : r.values) {
            auto& a = acc[{r.task, k}];
            a.first += v;
            ++a.second;
        }
    for (const auto& [k, a] : acc)
        std::cout << k.first << ' ' << k.second << ' ' << report::fixed(a.first / a.second, 4) << " (n=" << a.second
                  << ")\n";
}

int cmd_scenarios() {
    for (const auto& s : scenarios::builtin_scenarios()) std::cout << scenarios::describe(s) << '\n';
    return 0;
}

int cmd_prepare(const CommonFlags& f, const std::string& dest, int synthetic, int slices, int size) {
    const auto cfg = f.resolve();
    if (synthetic > 0) {
        for (int i = 0; i < synthetic; ++i) {
            const auto id = "subject" + std::to_string(i + 1);
            data::save_volume(dest, data::make_phantom(id, slices, size, cfg.seed * 1000003ULL + i));
            std::cout << id << ' ' << slices << 'x' << size << 'x' << size << '\n';
        }
        return 0;
    }
    const auto ids = cfg.subjects ? *cfg.subjects : scenarios::discover_subjects(cfg.data_root);
    for (const auto& id : ids) {
        const auto v = data::load_volume(cfg.data_root, id, cfg.load);
        data::save_volume(dest, v);
        std::cout << id << ' ' << v.depth() << 'x' << v.labels.height() << 'x' << v.labels.width() << '\n';
    }
    return 0;
}

int cmd_bias(const CommonFlags& f, const std::string& dest, std::optional<int> size) {
    const auto cfg = f.resolve();
    const int n = size.value_or(cfg.network.slice_size);
    fs::create_directories(dest);
    nlohmann::json table = nlohmann::json::array();
    for (const auto& field : data::make_bias_fields(n, cfg.bias_fields)) {
        const auto stem = fs::path(dest) / ("bias_field_" + std::to_string(field.field_id));
        Stack<float> st(1, n, n);
        double lo = 1e9, hi = -1e9;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double v = field.values(y, x);
                st(0, y, x) = static_cast<float>(v);
                lo = std::min(lo, v), hi = std::max(hi, v);
            }
        write_raster(stem.string() + ".mrs", st);
        // gray map: 0.7 -> black, 1.3 -> white
        RgbImage img(n, n, 1);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                img(y, x, 0) = static_cast<float>(std::clamp((field.values(y, x) - 0.7) / 0.6 * 255.0, 0.0, 255.0));
        image::Canvas c(n, n);
        c.blit(img, 0, 0);
        image::write_png(stem.string() + ".png", c);
        table.push_back({{"field_id", field.field_id}, {"coefficients", field.coeffs}, {"min", lo}, {"max", hi}});
        std::cout << "field " << field.field_id << " range [" << report::fixed(lo, 4) << ", " << report::fixed(hi, 4)
                  << "]\n";
    }
    std::ofstream(fs::path(dest) / "fields.json") << table.dump(2) << '\n';
    return 0;
}

int cmd_run(const CommonFlags& f, const std::string& scenario, int fold, const std::string& method) {
    const auto cfg = f.resolve();
    const auto key = make_key(scenario, fold, method);
    const auto e = scenarios::make_experiment(cfg);
    const auto r = scenarios::run_session(e, key, cfg.out, log);
    for (const auto& sr : r.manifest["subruns"])
        std::cout << key.str() << ' ' << sr["name"].get<std::string>() << " stop "
                  << sr["stop"]["reason"].get<std::string>() << " at epoch " << sr["stop"]["epoch"] << '\n';
    print_means(r.records);
    std::cout << "run directory " << scenarios::session_dir(cfg.out, key).string() << '\n';
    return 0;
}

int cmd_matrix(const CommonFlags& f, bool all, const std::vector<std::string>& only_scenarios,
               const std::vector<std::string>& only_methods, const std::vector<int>& only_folds, bool resume,
               bool dry_run, std::optional<int> folds_flag) {
    if (!all && only_scenarios.empty() && only_methods.empty() && only_folds.empty() && !dry_run)
        throw CLI::ValidationError("matrix", "select sessions with --all or --scenario/--method/--fold");
    const auto cfg = f.resolve();
    const int folds = fold_count(cfg, folds_flag);
    auto keys = scenarios::enumerate_sessions(scenarios::builtin_scenarios(), folds);
    std::vector<SessionKey> selected;
    for (const auto& k : keys) {
        auto in = [](const auto& list, const auto& v) { return list.empty() || std::count(list.begin(), list.end(), v); };
        if (in(only_scenarios, k.scenario_key()) && in(only_methods, std::string(method_name(k.method))) &&
            in(only_folds, k.fold))
            selected.push_back(k);
    }
    if (dry_run) {
        for (const auto& k : selected) std::cout << k.str() << '\n';
        log(std::to_string(selected.size()) + " session(s); nothing executed");
        return 0;
    }
    const auto e = scenarios::make_experiment(cfg);
    scenarios::MatrixOptions opts;
    opts.workers = cfg.workers;
    opts.resume = resume;
    opts.progress = log;
    const auto s = scenarios::run_matrix(selected, e, cfg.out, opts);
    std::cout << "executed " << s.executed.size() << ", skipped " << s.skipped.size() << ", failed " << s.failed.size()
              << '\n';
    for (const auto& [reason, n] : s.stop_reasons) std::cout << "stop " << reason << ' ' << n << '\n';
    for (const auto& [k, msg] : s.failed) std::cout << "failed " << k.str() << ": " << msg << '\n';
    for (const auto& p : s.metric_files) std::cout << "metrics " << p.string() << '\n';
    return s.failed.empty() ? 0 : 1;
}

int cmd_eval(const CommonFlags& f, const std::string& scenario, int fold, const std::string& method, bool write) {
    const auto cfg = f.resolve();
    const auto key = make_key(scenario, fold, method);
    const auto e = scenarios::make_experiment(cfg);
    const auto records = scenarios::reevaluate_session(e, key, cfg.out);
    const auto path = scenarios::session_dir(cfg.out, key) / "metrics.csv";
    if (fs::exists(path)) {
        const auto stored = metrics::read_metrics_csv(path);
        double worst = 0;
        if (stored.size() != records.size()) throw Error("stored metrics cover a different sample set");
        for (std::size_t i = 0; i < stored.size(); ++i)
            for (const auto& [k, v] : records[i].values) worst = std::max(worst, std::abs(v - stored[i].values.at(k)));
        std::cout << "max deviation from stored metrics " << worst << '\n';
    }
    print_means(records);
    if (write) metrics::write_metrics_csv(path, records);
    return 0;
}

int cmd_report(const std::string& runs, const std::string& out) {
    const auto s = report::render_report(runs, out);
    std::cout << s.sessions << " session(s) reported\n";
    for (const auto& p : s.files) std::cout << p.string() << '\n';
    for (const auto& w : s.warnings) log("notice: " + w);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multitask image-to-image translation experiments on brain MRI"};
    app.require_subcommand(1);

    app.add_subcommand("scenarios", "List the builtin scenarios");

    CommonFlags prep_f, bias_f, run_f, matrix_f, eval_f;
    std::string dest;
    int synthetic = 0, slices = 16, size = 64;
    auto* prepare = app.add_subcommand("prepare", "Write subjects in the portable raster format");
    prep_f.attach(prepare);
    prepare->add_option("--dest", dest, "Destination data root")->required();
    prepare->add_option("--synthetic", synthetic, "Write this many synthetic subjects instead of converting");
    prepare->add_option("--slices", slices, "Slices per synthetic subject");
    prepare->add_option("--size", size, "In-plane size of synthetic subjects");

    std::string bias_dest;
    std::optional<int> bias_size;
    auto* bias = app.add_subcommand("bias", "Export the bias fields");
    bias_f.attach(bias);
    bias->add_option("--dest", bias_dest, "Output directory")->required();
    bias->add_option("--size", bias_size, "Field size (default: network slice size)");

    std::string scenario, method;
    int fold = 0;
    auto* run = app.add_subcommand("run", "Train and evaluate one session");
    run_f.attach(run);
    run->add_option("--scenario", scenario, "Scenario key, e.g. 3A")->required();
    run->add_option("--fold", fold, "Held-out subject index")->required();
    run->add_option("--method", method, "unet_st, cgan_st, unet_mt or cgan_mt")->required();

    bool all = false, resume = false, dry_run = false;
    std::vector<std::string> m_scen, m_meth;
    std::vector<int> m_folds;
    std::optional<int> m_nfolds;
    auto* matrix = app.add_subcommand("matrix", "Run the scenario x method x fold matrix");
    matrix_f.attach(matrix);
    matrix->add_flag("--all", all, "Every session");
    matrix->add_option("--scenario", m_scen, "Restrict to scenario keys");
    matrix->add_option("--method", m_meth, "Restrict to methods");
    matrix->add_option("--fold", m_folds, "Restrict to folds");
    matrix->add_option("--folds", m_nfolds, "Fold count for --dry-run without data");
    matrix->add_flag("--resume", resume, "Skip sessions with completed manifests");
    matrix->add_flag("--dry-run", dry_run, "Print the session keys and exit");

    std::string e_scen, e_meth;
    int e_fold = 0;
    bool e_write = false;
    auto* eval = app.add_subcommand("eval", "Re-score a completed session from its checkpoints");
    eval_f.attach(eval);
    eval->add_option("--scenario", e_scen)->required();
    eval->add_option("--fold", e_fold)->required();
    eval->add_option("--method", e_meth)->required();
    eval->add_flag("--write", e_write, "Replace the stored metrics.csv");

    std::string runs, report_out;
    auto* rep = app.add_subcommand("report", "Render tables and figures from completed runs");
    rep->add_option("--runs", runs, "Runs directory")->required();
    rep->add_option("--out", report_out, "Report directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const auto* sub = app.get_subcommands().front();
        const std::string name = sub->get_name();
        if (name == "scenarios") return cmd_scenarios();
        if (name == "prepare") return cmd_prepare(prep_f, dest, synthetic, slices, size);
        if (name == "bias") return cmd_bias(bias_f, bias_dest, bias_size);
        if (name == "run") return cmd_run(run_f, scenario, fold, method);
        if (name == "matrix")
            return cmd_matrix(matrix_f, all, m_scen, m_meth, m_folds, resume, dry_run, m_nfolds);
        if (name == "eval") return cmd_eval(eval_f, e_scen, e_fold, e_meth, e_write);
        if (name == "report") return cmd_report(runs, report_out);
    } catch (const CLI::ValidationError& e) {
        std::cerr << e.what() << '\n' << app.help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
