#pragma once

#include <random>
#include <vector>

#include "mti/nets.hpp"
#include "mti/trainer.hpp"
#include "oracles.hpp"

struct GradientProbe {
    double analytic = 0;
    double numeric = 0;

    [[nodiscard]] double relative_error() const {
        const double scale = std::max(std::abs(analytic), std::abs(numeric));
        return scale == 0 ? 0.0 : std::abs(analytic - numeric) / scale;
    }
};

/// Analytic vs central-difference gradients of the mean L1 loss for `count`
/// randomly chosen parameters of a double-precision generator.
inline std::vector<GradientProbe> probe_l1_gradients(const mti::nets::NetworkConfig& cfg, int count,
                                                     std::uint64_t seed) {
    using mti::Tensor;
    auto gen = mti::nets::build_unet<double>(cfg);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const int n = cfg.slice_size;
    Tensor<double> x(2, n, n, cfg.in_channels), y(2, n, n, cfg.out_channels);
    for (double& v : x.values()) v = u(rng);
    for (double& v : y.values()) v = u(rng);

    auto loss = [&] { return mti::train::l1_loss(gen.forward(x), y); };

    const Tensor<double> out = gen.forward(x);
    Tensor<double> g(out.batch(), out.height(), out.width(), out.channels());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double d = out.values()[i] - y.values()[i];
        g.values()[i] = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / static_cast<double>(g.size());
    }
    gen.zero_grad();
    gen.backward(g);

    auto params = gen.parameters();
    std::vector<GradientProbe> probes;
    std::uniform_int_distribution<std::size_t> pick_array(0, params.size() - 1);
    while (static_cast<int>(probes.size()) < count) {
        auto* p = params[pick_array(rng)];
        const std::size_t i = std::uniform_int_distribution<std::size_t>(0, p->size() - 1)(rng);
        GradientProbe probe;
        probe.analytic = p->grad[i];
        probe.numeric = oracle::central_difference(&p->value[i], 1e-6, loss);
        probes.push_back(probe);
    }
    return probes;
}

/// Depth-1 generator with 4 filters at 8x8.
inline mti::nets::NetworkConfig gradient_check_config() {
    mti::nets::NetworkConfig c = mti::nets::toy_config(1);
    c.depth = 1;
    c.base_filters = 4;
    c.slice_size = 8;
    c.seed = 11;
    return c;
}
