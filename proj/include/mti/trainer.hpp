#pragma once

// One training session: Adam, L1 / adversarial losses, epoch loop and the
// early-stop / force-stop rules.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mti/dataset.hpp"
#include "mti/nets.hpp"

namespace mti::train {

enum class Method { unet, cgan };

inline Method parse_method(std::string_view s) {
    if (s == "unet") return Method::unet;
    if (s == "cgan") return Method::cgan;
    throw Error("unknown training method '" + std::string(s) + "'");
}
inline std::string_view to_string(Method m) { return m == Method::cgan ? "cgan" : "unet"; }

struct TrainConfig {
    double learning_rate = 2e-4;
    int batch_size = 20;
    int max_epochs = 500;
    double early_stop_l1 = 0.01;
    double l1_weight = 10.0;
    int disc_win_patience = 10;
    Method method = Method::unet;
    std::uint64_t seed = 0;
    /// Adam first-moment decay; unset means 0.5 for cgan and 0.9 for unet.
    std::optional<double> beta1;
    double beta2 = 0.999;

    [[nodiscard]] double resolved_beta1() const { return beta1.value_or(method == Method::cgan ? 0.5 : 0.9); }

    bool operator==(const TrainConfig&) const = default;
};

inline void validate(const TrainConfig& c) {
    auto fail = [](const std::string& m) { throw Error("invalid train config: " + m); };
    if (!(c.learning_rate > 0)) fail("learning_rate must be positive");
    if (c.batch_size < 1) fail("batch_size must be >= 1");
    if (c.max_epochs < 1) fail("max_epochs must be >= 1");
    if (!(c.early_stop_l1 > 0)) fail("early_stop_l1 must be positive");
    if (!(c.l1_weight >= 0)) fail("l1_weight must be non-negative");
    if (c.disc_win_patience < 1) fail("disc_win_patience must be >= 1");
    const double b1 = c.resolved_beta1();
    if (!(b1 >= 0 && b1 < 1) || !(c.beta2 >= 0 && c.beta2 < 1)) fail("Adam decays must lie in [0, 1)");
}

struct EpochRecord {
    int epoch = 0;
    double gen_l1 = 0;
    double gen_adv = 0;    // cgan only
    double disc_loss = 0;  // cgan only
    double seconds = 0;
};

using LossCurve = std::vector<EpochRecord>;

enum class StopReason { early_stop, max_epoch_force, discriminator_force };

inline std::string_view to_string(StopReason r) {
    switch (r) {
        case StopReason::early_stop: return "early_stop";
        case StopReason::max_epoch_force: return "max_epoch_force";
        case StopReason::discriminator_force: return "discriminator_force";
    }
    return "?";
}

inline StopReason parse_stop_reason(std::string_view s) {
    for (auto r : {StopReason::early_stop, StopReason::max_epoch_force, StopReason::discriminator_force})
        if (s == to_string(r)) return r;
    throw Error("unknown stop reason '" + std::string(s) + "'");
}

struct StopDecision {
    StopReason reason = StopReason::early_stop;
    int epoch = 0;
    bool operator==(const StopDecision&) const = default;
};

// --- losses -----------------------------------------------------------------

/// Mean absolute difference over all elements.
template <typename T>
double l1_loss(std::span<const T> pred, std::span<const T> target) {
    if (pred.size() != target.size()) throw Error("l1_loss shape mismatch");
    if (pred.empty()) throw Error("l1_loss of empty arrays");
    double s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(static_cast<double>(pred[i]) - target[i]);
    return s / static_cast<double>(pred.size());
}

template <typename T>
double l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (!pred.same_shape(target)) throw Error("l1_loss shape mismatch " + pred.shape_string() + " vs " + target.shape_string());
    return l1_loss(pred.values(), target.values());
}

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean binary cross-entropy of probabilities against a constant label.
template <typename T>
double bce(std::span<const T> probs, double label) {
    if (probs.empty()) throw Error("bce of empty scores");
    double s = 0;
    for (T p : probs) {
        if (!std::isfinite(static_cast<double>(p))) throw Error("non-finite discriminator score");
        const double q = static_cast<double>(p);
        if (label > 0) s -= label * std::log(std::max(q, kProbabilityFloor));
        if (label < 1) s -= (1.0 - label) * std::log(std::max(1.0 - q, kProbabilityFloor));
    }
    return s / static_cast<double>(probs.size());
}

/// BCE(scores, real) + beta * L1(pred, target). Scores are probabilities.
template <typename T>
double cgan_generator_loss(std::span<const T> adv_scores, std::span<const T> pred, std::span<const T> target,
                           double beta) {
    if (!(beta >= 0) || !std::isfinite(beta)) throw Error("l1 weight must be a finite non-negative number");
    return bce(adv_scores, 1.0) + beta * l1_loss(pred, target);
}

/// Mean BCE-with-logits and its gradient (already divided by the count).
template <typename T>
double bce_with_logits(const Tensor<T>& logits, double label, Tensor<T>* grad, double grad_scale = 1.0) {
    const auto z = logits.values();
    if (grad) *grad = Tensor<T>(logits.batch(), logits.height(), logits.width(), logits.channels());
    double s = 0;
    const double n = static_cast<double>(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double x = z[i];
        if (!std::isfinite(x)) throw Error("non-finite discriminator logit");
        s += std::max(x, 0.0) - x * label + std::log1p(std::exp(-std::abs(x)));
        if (grad) grad->values()[i] = static_cast<T>(grad_scale * (1.0 / (1.0 + std::exp(-x)) - label) / n);
    }
    return s / n;
}

// --- stop rule ----------------------------------------------------------------

/// Generator objective per epoch: L1 alone for U-Net, adv + beta * L1 for cGAN.
inline double generator_total(const EpochRecord& r, const TrainConfig& c) {
    return c.method == Method::cgan ? r.gen_adv + c.l1_weight * r.gen_l1 : r.gen_l1;
}

/// Decision after the latest epoch of `curve`; nullopt means keep training.
/// Priority: early stop, then discriminator force stop, then epoch cap.
inline std::optional<StopDecision> check_stop(const LossCurve& curve, const TrainConfig& c) {
    if (curve.empty()) throw Error("check_stop needs at least one epoch");
    const auto& last = curve.back();
    if (last.gen_l1 <= c.early_stop_l1) return StopDecision{StopReason::early_stop, last.epoch};
    if (c.method == Method::cgan && static_cast<int>(curve.size()) > c.disc_win_patience) {
        bool wins = true;
        for (std::size_t i = curve.size() - c.disc_win_patience; i < curve.size() && wins; ++i) {
            wins = curve[i].disc_loss < curve[i - 1].disc_loss &&
                   generator_total(curve[i], c) > generator_total(curve[i - 1], c);
        }
        if (wins) return StopDecision{StopReason::discriminator_force, last.epoch};
    }
    if (last.epoch >= c.max_epochs) return StopDecision{StopReason::max_epoch_force, last.epoch};
    return std::nullopt;
}

// --- tensors from samples -------------------------------------------------------

/// [0, 255] -> activation range.
inline float to_network(float v, nn::OutputActivation a) {
    return a == nn::OutputActivation::tanh ? v / 127.5f - 1.0f : v / 255.0f;
}
inline float from_network(float v, nn::OutputActivation a) {
    const float x = a == nn::OutputActivation::tanh ? (v + 1.0f) * 127.5f : v * 255.0f;
    return std::clamp(x, 0.0f, 255.0f);
}

inline Tensor<float> input_batch(const std::vector<data::SliceSample>& samples, std::span<const std::size_t> idx,
                                 nn::OutputActivation a) {
    const auto& first = samples.at(idx[0]).input;
    Tensor<float> t(static_cast<int>(idx.size()), first.height(), first.width(), first.channels());
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& img = samples[idx[b]].input;
        if (img.height() != first.height() || img.width() != first.width() || img.channels() != first.channels())
            throw Error("inconsistent sample input shapes");
        auto dst = t.item(static_cast<int>(b));
        auto src = img.values();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = to_network(src[i], a);
    }
    return t;
}

/// Targets stacked along channels in task order.
inline Tensor<float> target_batch(const std::vector<data::SliceSample>& samples, std::span<const std::size_t> idx,
                                  nn::OutputActivation a) {
    const auto& first = samples.at(idx[0]);
    int channels = 0;
    for (const auto& t : first.targets) channels += t.channels();
    const int h = first.targets.at(0).height(), w = first.targets.at(0).width();
    Tensor<float> t(static_cast<int>(idx.size()), h, w, channels);
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& s = samples[idx[b]];
        int offset = 0;
        for (const auto& img : s.targets) {
            if (img.height() != h || img.width() != w) throw Error("inconsistent sample target shapes");
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int c = 0; c < img.channels(); ++c)
                        t(static_cast<int>(b), y, x, offset + c) = to_network(img(y, x, c), a);
            offset += img.channels();
        }
        if (offset != channels) throw Error("inconsistent target channel count");
    }
    return t;
}

// --- session --------------------------------------------------------------------

struct TrainResult {
    nets::Generator<float> generator;
    LossCurve curve;
    StopDecision stop;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Gradient of the mean L1 loss with respect to pred, scaled by `weight`.
inline Tensor<float> l1_gradient(const Tensor<float>& pred, const Tensor<float>& target, double weight) {
    Tensor<float> g(pred.batch(), pred.height(), pred.width(), pred.channels());
    const double scale = weight / static_cast<double>(pred.size());
    auto p = pred.values();
    auto t = target.values();
    auto gv = g.values();
    for (std::size_t i = 0; i < gv.size(); ++i) {
        const float d = p[i] - t[i];
        gv[i] = static_cast<float>(d > 0 ? scale : (d < 0 ? -scale : 0.0));
    }
    return g;
}

inline TrainResult train_session(const std::vector<data::SliceSample>& samples, const nets::NetworkConfig& net,
                                 const TrainConfig& config, const EpochCallback& on_epoch = {}) {
    validate(config);
    nets::validate(net);
    if (samples.empty()) throw Error("train_session needs at least one sample");
    {
        int target_channels = 0;
        for (const auto& t : samples.front().targets) target_channels += t.channels();
        if (target_channels != net.out_channels || samples.front().input.channels() != net.in_channels)
            throw Error("network channel layout does not match samples");
    }

    nets::NetworkConfig cfg = net;
    cfg.seed = config.seed;
    auto gen = nets::build_unet<float>(cfg);
    std::optional<nets::Discriminator<float>> disc;
    const nets::AdamOptions adam{config.learning_rate, config.resolved_beta1(), config.beta2, 1e-8};
    nets::Adam<float> gen_opt(adam);
    nets::Adam<float> disc_opt(adam);
    if (config.method == Method::cgan) disc.emplace(cfg);

    const auto act = cfg.output_activation;
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(config.seed);

    LossCurve curve;
    for (int epoch = 1;; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        double sum_l1 = 0, sum_adv = 0, sum_disc = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            const double weight = static_cast<double>(idx.size());
            const Tensor<float> x = input_batch(samples, idx, act);
            const Tensor<float> y = target_batch(samples, idx, act);

            const Tensor<float> fake = gen.forward(x);
            const double l1 = l1_loss(fake, y);
            if (!std::isfinite(l1))
                throw Error("non-finite L1 loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                            std::to_string(start));
            sum_l1 += l1 * weight;

            gen.zero_grad();
            if (config.method == Method::unet) {
                gen.backward(l1_gradient(fake, y, 1.0));
                gen_opt.step(gen.parameters());
                continue;
            }

            // discriminator update on (x, y) real and (x, G(x)) fake pairs
            disc->zero_grad();
            Tensor<float> g;
            double d_loss = 0.5 * bce_with_logits(disc->forward(x, y), 1.0, &g, 0.5);
            disc->backward(g);
            d_loss += 0.5 * bce_with_logits(disc->forward(x, fake), 0.0, &g, 0.5);
            disc->backward(g);
            disc_opt.step(disc->parameters());

            // generator update against the refreshed discriminator
            const double adv = bce_with_logits(disc->forward(x, fake), 1.0, &g);
            if (!std::isfinite(adv) || !std::isfinite(d_loss))
                throw Error("non-finite adversarial loss at epoch " + std::to_string(epoch));
            Tensor<float> gfake = disc->backward(g);
            nn::add_inplace(gfake, l1_gradient(fake, y, config.l1_weight));
            gen.backward(gfake);
            gen_opt.step(gen.parameters());
            sum_adv += adv * weight;
            sum_disc += d_loss * weight;
        }
        const double n = static_cast<double>(samples.size());
        EpochRecord rec{epoch, sum_l1 / n, sum_adv / n, sum_disc / n,
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
        curve.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (auto stop = check_stop(curve, config)) return {std::move(gen), std::move(curve), *stop};
    }
}

/// Runs the generator over samples in chunks and returns outputs in [0, 255],
/// one HWC image per sample with all stacked channels.
inline std::vector<RgbImage> predict(nets::Generator<float>& gen, const std::vector<data::SliceSample>& samples,
                                     int chunk = 8) {
    std::vector<RgbImage> out;
    out.reserve(samples.size());
    const auto act = gen.config().output_activation;
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t start = 0; start < idx.size(); start += chunk) {
        const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(chunk));
        const Tensor<float> y = gen.forward(input_batch(samples, std::span(idx.data() + start, end - start), act));
        for (int b = 0; b < y.batch(); ++b) {
            RgbImage img(y.height(), y.width(), y.channels());
            auto src = y.item(b);
            auto dst = img.values();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = from_network(src[i], act);
            out.push_back(std::move(img));
        }
    }
    return out;
}

// --- persistence ------------------------------------------------------------------

inline void write_curve_csv(const std::filesystem::path& path, const LossCurve& curve) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << "epoch,gen_l1,gen_adv,disc_loss\n";
    out.precision(10);
    for (const auto& r : curve) out << r.epoch << ',' << r.gen_l1 << ',' << r.gen_adv << ',' << r.disc_loss << '\n';
}

inline LossCurve read_curve_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "epoch,gen_l1,gen_adv,disc_loss") throw Error(path.string() + ": unexpected curve header");
    LossCurve curve;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        EpochRecord r;
        char comma;
        ls >> r.epoch >> comma >> r.gen_l1 >> comma >> r.gen_adv >> comma >> r.disc_loss;
        if (!ls) throw Error(path.string() + ": malformed curve row '" + line + "'");
        curve.push_back(r);
    }
    return curve;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs},       {"early_stop_l1", c.early_stop_l1},
                     {"l1_weight", c.l1_weight},         {"disc_win_patience", c.disc_win_patience},
                     {"method", std::string(to_string(c.method))},
                     {"seed", c.seed},                   {"beta1", c.resolved_beta1()},
                     {"beta2", c.beta2}};
    return j;
}

}  // namespace mti::train
