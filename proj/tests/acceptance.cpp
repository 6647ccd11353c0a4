// Acceptance checks 1-9. Prints one PASS/FAIL line per criterion and exits
// nonzero when any fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "mti/biasfield.hpp"
#include "mti/config.hpp"
#include "mti/metrics.hpp"
#include "mti/report.hpp"
#include "mti/scenarios.hpp"
#include "mti/stats.hpp"
#include "oracles.hpp"
#include "synthetic_runs.hpp"
#include "test_util.hpp"

using namespace mti;

namespace {

/// Collects failed expectations for one criterion.
struct Check {
    std::vector<std::string> failures;
    std::string summary;

    void expect(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
};

std::string num(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

// --- 1 ---------------------------------------------------------------------------

void metric_oracles(Check& c) {
    std::mt19937 rng(2024);
    std::uniform_real_distribution<float> u(0, 255);
    std::uniform_int_distribution<int> lab(0, 3);
    double worst_exact = 0, worst_ssim = 0;
    for (int i = 0; i < 100; ++i) {
        Slice a(16, 16), b(16, 16);
        for (float& v : a.values()) v = u(rng);
        for (float& v : b.values()) v = u(rng);
        LabelSlice p(16, 16), g(16, 16);
        for (int& v : p.values()) v = lab(rng);
        for (int& v : g.values()) v = lab(rng);
        const auto d = metrics::dice(p, g);
        for (const double e : {d.gm - oracle::dice(p, g, 1), d.wm - oracle::dice(p, g, 2),
                               d.csf - oracle::dice(p, g, 3), metrics::fpr(p, g) - oracle::fpr(p, g),
                               metrics::ncc(a, b) - oracle::ncc(a, b)})
            worst_exact = std::max(worst_exact, std::abs(e));
        worst_ssim = std::max(worst_ssim, std::abs(metrics::ssim(a, b) - oracle::ssim(a, b)));
    }
    c.expect(worst_exact <= 1e-9, "dice/fpr/ncc deviation " + num(worst_exact));
    c.expect(worst_ssim <= 1e-6, "ssim deviation " + num(worst_ssim));
    c.summary = "100 pairs, max |dice,fpr,ncc - oracle| " + num(worst_exact) + ", max |ssim - oracle| " + num(worst_ssim);
}

// --- 2 ---------------------------------------------------------------------------

void bias_algebra(Check& c) {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(1.0, 196.0);  // 196 * 1.3 < 255
    double lo = 1e9, hi = -1e9, worst_inverse = 0, worst_step_ratio = 0;
    for (int n : {64, 512}) {
        const double bound = 2.4 / n;
        for (int id = 1; id <= bias::kFieldCount; ++id) {
            const auto f = bias::generate_bias_field(id, n, n);
            double step = 0;
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    const double v = f.values(y, x);
                    lo = std::min(lo, v), hi = std::max(hi, v);
                    if (x + 1 < n) step = std::max(step, std::abs(f.values(y, x + 1) - v));
                    if (y + 1 < n) step = std::max(step, std::abs(f.values(y + 1, x) - v));
                }
            worst_step_ratio = std::max(worst_step_ratio, step / bound);
            Plane<double> s(n, n);
            for (double& v : s.values()) v = u(rng);
            const auto con = bias::contaminate(s, f);
            for (std::size_t i = 0; i < s.size(); ++i)
                worst_inverse =
                    std::max(worst_inverse, std::abs(con.values()[i] / f.values.values()[i] - s.values()[i]));
        }
    }
    c.expect(lo >= 0.7 && hi <= 1.3, "field range [" + num(lo) + ", " + num(hi) + "]");
    c.expect(worst_step_ratio <= 1.0, "smoothness bound exceeded by factor " + num(worst_step_ratio));
    c.expect(worst_inverse <= 1e-6, "inverse deviation " + num(worst_inverse));
    c.summary = "16 fields, range [" + num(lo) + ", " + num(hi) + "], max step / bound " + num(worst_step_ratio) +
                ", max inverse error " + num(worst_inverse);
}

// --- 3 ---------------------------------------------------------------------------

struct Trace {
    std::string name;
    train::LossCurve curve;
    train::TrainConfig cfg;
    std::optional<train::StopDecision> expected;
};

std::vector<Trace> stop_traces() {
    auto flat = [](int n, double l1) {
        train::LossCurve c;
        for (int e = 1; e <= n; ++e) c.push_back({e, l1, 1.0, 1.0, 0.0});
        return c;
    };
    auto disc_run = [&](int n, int start) {  // strictly monotone from epoch `start` on
        auto c = flat(n, 0.2);
        for (int e = start; e <= n; ++e) {
            c[e - 1].disc_loss = 1.0 - 0.01 * (e - start + 1);
            c[e - 1].gen_adv = 1.0 + 0.01 * (e - start + 1);
        }
        return c;
    };
    train::TrainConfig unet, cgan;
    cgan.method = train::Method::cgan;
    using R = train::StopReason;
    std::vector<Trace> t;

    auto early = flat(60, 0.05);
    for (int e = 40; e <= 58; ++e) early[e - 1].gen_l1 = 0.05 - 0.002 * (e - 39);
    early[58].gen_l1 = 0.01;  // inclusive threshold
    early[59].gen_l1 = 0.005;
    t.push_back({"early stop at the first epoch with L1 <= 0.01", early, unet, train::StopDecision{R::early_stop, 59}});

    // a run whose first strict transition lands on epoch 21 completes its 10th at epoch 30
    t.push_back({"ten consecutive discriminator wins", disc_run(40, 21), cgan,
                 train::StopDecision{R::discriminator_force, 30}});
    auto nine = disc_run(40, 21);
    for (int e = 30; e <= 40; ++e) nine[e - 1] = {e, 0.2, 1.0, 1.0, 0.0};
    t.push_back({"nine consecutive wins are not enough", nine, cgan, std::nullopt});
    t.push_back({"U-Net ignores the discriminator rule", disc_run(40, 21), unet, std::nullopt});
    t.push_back({"epoch cap", flat(500, 0.3), unet, train::StopDecision{R::max_epoch_force, 500}});

    auto both = disc_run(40, 21);
    both[29].gen_l1 = 0.009;
    both[29].gen_adv = 5.0;  // keeps the generator total rising
    t.push_back({"early stop outranks discriminator force", both, cgan, train::StopDecision{R::early_stop, 30}});

    cgan.max_epochs = 30;
    t.push_back({"discriminator force outranks the cap", disc_run(30, 21), cgan,
                 train::StopDecision{R::discriminator_force, 30}});
    return t;
}

void stop_rules(Check& c) {
    const auto traces = stop_traces();
    for (const auto& tr : traces) {
        // replay epoch by epoch: the first decision is the stop
        std::optional<train::StopDecision> got;
        train::LossCurve prefix;
        for (const auto& r : tr.curve) {
            prefix.push_back(r);
            got = train::check_stop(prefix, tr.cfg);
            if (got) break;
        }
        const auto show = [](const std::optional<train::StopDecision>& d) {
            return d ? std::string(train::to_string(d->reason)) + "@" + std::to_string(d->epoch) : std::string("none");
        };
        c.expect(got == tr.expected, tr.name + ": got " + show(got) + ", expected " + show(tr.expected));
    }
    c.summary = std::to_string(traces.size()) + " traces replayed epoch by epoch";
}

// --- 4 ---------------------------------------------------------------------------

void matrix_accounting(Check& c) {
    const auto keys = scenarios::enumerate_sessions(scenarios::builtin_scenarios(), 7);
    c.expect(keys.size() == 280, "enumerate_sessions gave " + std::to_string(keys.size()) + " keys");
    c.expect(std::set<SessionKey>(keys.begin(), keys.end()).size() == keys.size(), "duplicate session keys");

    const auto cfg = config::load_config("", {{"run.toy", "true"},
                                              {"toy.subjects", "7"},
                                              {"toy.slices", "1"},
                                              {"toy.source_size", "16"},
                                              {"network.slice_size", "16"}});
    const auto e = scenarios::make_experiment(cfg);
    std::size_t checked = 0;
    std::set<std::string> held_out;
    for (int fold = 0; fold < 7; ++fold)
        for (const auto& [id, sub] : {std::pair{1, 'A'}, std::pair{4, 'B'}}) {
            const auto d = scenarios::prepare_session_data(e, {id, sub, fold, MethodVariant::cgan_mt});
            std::set<std::string> train_ids, test_ids;
            for (const auto& s : d.train) train_ids.insert(s.meta.subject_id);
            for (const auto& s : d.test) test_ids.insert(s.meta.subject_id);
            checked += d.train.size() + d.test.size();
            c.expect(test_ids.size() == 1 && train_ids.count(*test_ids.begin()) == 0,
                     "fold " + std::to_string(fold) + " leaks its test subject into training");
            c.expect(train_ids.size() == 6, "fold " + std::to_string(fold) + " trains on " +
                                                std::to_string(train_ids.size()) + " subjects");
            held_out.insert(test_ids.begin(), test_ids.end());
        }
    c.expect(held_out.size() == 7, "folds hold out " + std::to_string(held_out.size()) + " distinct subjects");
    c.summary = std::to_string(keys.size()) + " session keys; 7 folds over 7 subjects, " + std::to_string(checked) +
                " sample records checked for leakage";
}

// --- 5 ---------------------------------------------------------------------------

std::vector<data::SliceSample> toy_samples(const std::vector<std::uint64_t>& seeds, int slices, int size,
                                           const std::vector<data::AugmentationParams>& augs, bool inversion) {
    std::vector<data::SliceSample> out;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
        const auto id = "toy" + std::to_string(s);
        const auto v = data::stretch_intensity(data::make_phantom(id, slices, size, seeds[s]));
        for (int z = 0; z < slices; ++z)
            for (std::size_t a = 0; a < augs.size(); ++a) {
                const auto img = data::augment_image(v.modality(Modality::flair).slice(z), augs[a]);
                data::SliceSample smp{RgbImage::replicate(img, 3), {RgbImage::replicate(img, 3)},
                                      {id, z, static_cast<int>(a), 0, "toy", {}}};
                if (inversion) {
                    auto inv = img;
                    for (float& x : inv.values()) x = 255.0f - x;
                    smp.targets.push_back(RgbImage::replicate(inv, 3));
                }
                out.push_back(std::move(smp));
            }
    }
    return out;
}

void toy_convergence(Check& c) {
    const auto cfg = config::load_config("", {{"run.toy", "true"}});
    const int size = cfg.network.slice_size;
    std::ostringstream sum;
    for (const bool mt : {false, true}) {
        const auto train_set = toy_samples({17, 18}, cfg.toy_slices, size, cfg.augmentations, mt);
        const auto test_set = toy_samples({99}, cfg.toy_slices, size, {data::AugmentationParams{}}, mt);
        auto net = cfg.network;
        net.out_channels = mt ? 6 : 3;
        const auto start = std::chrono::steady_clock::now();
        auto r = train::train_session(train_set, net, cfg.train);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        const std::vector<TaskSpec> tasks(mt ? 2 : 1, TaskSpec{TaskKind::bias_correct, std::nullopt});
        const auto recs = metrics::evaluate_session(r.generator, test_set, tasks, "toy");
        double ssim = 0, ncc = 0;
        for (const auto& rec : recs) ssim += rec.values.at("ssim"), ncc += rec.values.at("ncc");
        ssim /= static_cast<double>(recs.size());
        ncc /= static_cast<double>(recs.size());

        const std::string label = mt ? "MT identity+inversion" : "ST identity";
        c.expect(r.stop.reason == train::StopReason::early_stop && r.stop.epoch <= 200,
                 label + " stopped by " + std::string(train::to_string(r.stop.reason)) + " at epoch " +
                     std::to_string(r.stop.epoch));
        c.expect(ssim >= 0.95, label + " held-out SSIM " + num(ssim));
        c.expect(ncc >= 0.99, label + " held-out NCC " + num(ncc));
        sum << (mt ? "; " : "") << label << " early stop at epoch " << r.stop.epoch << " (" << num(secs) << " s), "
            << train_set.size() << " samples, held-out SSIM " << num(ssim) << " NCC " << num(ncc);
    }
    c.summary = sum.str();
}

// --- 6 ---------------------------------------------------------------------------

void gradient_sanity(Check& c) {
    const auto probes = probe_l1_gradients(gradient_check_config(), 5, 77);
    double worst = 0;
    for (const auto& p : probes) worst = std::max(worst, p.relative_error());
    c.expect(worst <= 1e-3, "relative error " + num(worst));
    c.summary = "5 parameters of a depth-1, 4-filter generator, max relative error " + num(worst);
}

// --- 7 ---------------------------------------------------------------------------

void parameter_counts(Check& c) {
    auto conv = [](std::size_t in, std::size_t out) { return 9 * in * out + out; };
    const std::size_t toy_unet = conv(3, 4) + conv(4, 8) + conv(8, 16) + conv(16, 8) + conv(16, 8) + conv(8, 4) +
                                 conv(8, 4) + conv(4, 3);
    const std::size_t toy_disc = conv(6, 4) + conv(4, 8) + conv(8, 16) + conv(16, 32) + conv(32, 1);
    const auto got_unet = nets::count_parameters(nets::build_unet(nets::toy_config(1)));
    const auto got_disc = nets::count_parameters(nets::build_discriminator(nets::toy_config(1)));
    c.expect(got_unet == toy_unet, "toy U-Net " + std::to_string(got_unet) + " vs " + std::to_string(toy_unet));
    c.expect(got_disc == toy_disc, "toy discriminator " + std::to_string(got_disc) + " vs " + std::to_string(toy_disc));

    const auto st = nets::full_scale_config(1), mt = nets::full_scale_config(2);
    const auto g_st = nets::count_parameters(nets::generator_layers(st));
    const auto g_mt = nets::count_parameters(nets::generator_layers(mt));
    const auto d_st = nets::count_parameters(nets::discriminator_layers(st));
    const auto d_mt = nets::count_parameters(nets::discriminator_layers(mt));
    const std::array<std::pair<const char*, std::pair<std::size_t, std::size_t>>, 4> rows{{
        {"U-Net-ST", {g_st, 74'750'703}},
        {"cGAN-ST", {g_st + d_st, 76'292'808}},
        {"U-Net-MT", {g_mt, 74'756'106}},
        {"cGAN-MT", {g_mt + d_mt, 76'299'939}},
    }};
    std::ostringstream sum;
    sum << "toy U-Net " << got_unet << ", toy discriminator " << got_disc << "; full scale";
    for (const auto& [name, v] : rows) {
        const long long residual = static_cast<long long>(v.first) - static_cast<long long>(v.second);
        sum << ' ' << name << ' ' << v.first << " (published " << v.second << ", residual " << residual << ")";
    }
    c.summary = sum.str();
}

// --- 8 ---------------------------------------------------------------------------

void statistics(Check& c) {
    const auto ex = stats::paired_ttest({2, 3, 4, 0}, {1, 2, 3, 1});
    c.expect(std::abs(ex.t - 1.0) <= 1e-3 && ex.df == 3 && std::abs(ex.p - 0.391) <= 1e-3,
             "example gave t " + num(ex.t) + " df " + std::to_string(ex.df) + " p " + num(ex.p));

    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0, 1);
    double worst = 0;
    for (int k = 0; k < 50; ++k) {
        const std::size_t len = 3 + static_cast<std::size_t>(k % 25);
        std::vector<double> x(len), y(len);
        for (std::size_t i = 0; i < len; ++i) {
            x[i] = n(rng);
            y[i] = x[i] + 0.3 * n(rng) + 0.05 * (k % 5);
        }
        const auto r = stats::paired_ttest(x, y);
        worst = std::max(worst, std::abs(r.p - oracle::t_two_sided_p(r.t, r.df)));
    }
    c.expect(worst <= 1e-6, "p-value deviation from the CDF oracle " + num(worst));

    stats::PValueEntry at, above, below;
    at.p = 0.05;
    above.p = std::nextafter(0.05, 1.0);
    below.p = 0.049;
    c.expect(!at.not_significant() && report::markdown_p(at).find("**") == std::string::npos,
             "p = 0.05 rendered bold");
    c.expect(above.not_significant() && report::markdown_p(above).rfind("**", 0) == 0,
             "p just above 0.05 not rendered bold");
    c.expect(!below.not_significant(), "p = 0.049 flagged as not significant");
    c.summary = "example t " + num(ex.t) + " df " + std::to_string(ex.df) + " p " + num(ex.p) +
                "; 50 samples, max |p - oracle| " + num(worst) + "; bold only for p > 0.05";
}

// --- 9 ---------------------------------------------------------------------------

std::vector<std::string> read_lines(const std::filesystem::path& p) {
    std::vector<std::string> out;
    std::ifstream in(p);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

void report_structure(Check& c) {
    TempDir dir("mti_acceptance");
    synthetic::write_run_set(dir / "runs", 3, 8, 1);
    const auto s = report::render_report(dir / "runs", dir / "report");
    c.expect(s.sessions == 120, "report saw " + std::to_string(s.sessions) + " sessions");

    const auto t1 = read_lines(dir / "report" / "table1.csv");
    const auto t2 = read_lines(dir / "report" / "table2.csv");
    const auto t3 = read_lines(dir / "report" / "table3.csv");
    // scenario/sub blocks of (metric, metric, Epochs) rows per task column group
    c.expect(t1.size() == 1 + 4 * 3, "table1 has " + std::to_string(t1.size()) + " lines");
    c.expect(t2.size() == 1 + 6 * 3, "table2 has " + std::to_string(t2.size()) + " lines");
    c.expect(t3.size() == 1 + 10, "table3 has " + std::to_string(t3.size()) + " lines");
    if (!t1.empty())
        c.expect(t1[0].find("task1_Unet-ST,task1_cGAN-ST,task1_Unet-MT,task1_cGAN-MT") != std::string::npos,
                 "table1 method columns out of order");
    if (!t3.empty())
        c.expect(t3[0].find("task1_Unet-ST vs. cGAN-ST,task1_Unet-MT vs. cGAN-MT,task1_Unet-ST vs. Unet-MT,"
                            "task1_cGAN-ST vs. cGAN-MT") != std::string::npos,
                 "table3 comparison columns out of order");
    std::string all;
    for (const auto& l : t1) all += l + '\n';
    for (const auto& l : t2) all += l + '\n';
    c.expect(all.find("*,") != std::string::npos || all.find("*\n") != std::string::npos,
             "no discriminator force marker");
    c.expect(all.find("500-") != std::string::npos, "no epoch cap marker");

    std::ifstream md(dir / "report" / "report.md");
    const std::string text((std::istreambuf_iterator<char>(md)), std::istreambuf_iterator<char>());
    for (const char* note : {"\\*: Discriminator wins for the 10 continuous epochs (force stop)",
                             "-: Reached maximum allowed epochs (force stop)",
                             "No sign: reached desired error loss (early stop)"})
        c.expect(text.find(note) != std::string::npos, std::string("report.md lacks footnote '") + note + "'");
    c.summary = "synthetic 3-fold run set: table1 " + std::to_string(t1.size()) + " lines, table2 " +
                std::to_string(t2.size()) + ", table3 " + std::to_string(t3.size()) + ", footnote markers present";
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria{
        {"metric oracle equivalence", metric_oracles},
        {"bias-field algebra", bias_algebra},
        {"stop criteria", stop_rules},
        {"matrix accounting", matrix_accounting},
        {"desk-scale convergence", toy_convergence},
        {"gradient sanity", gradient_sanity},
        {"parameter counting", parameter_counts},
        {"statistics", statistics},
        {"report structure", report_structure},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Check c;
        const auto start = std::chrono::steady_clock::now();
        try {
            criteria[i].second(c);
        } catch (const std::exception& e) {
            c.failures.push_back(std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool ok = c.failures.empty();
        failed += !ok;
        std::printf("%s criterion %zu: %s (%.2f s): %s\n", ok ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                    secs, c.summary.c_str());
        for (const auto& f : c.failures) std::printf("    %s\n", f.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
