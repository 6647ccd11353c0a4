#pragma once

// U-Net generator, patch discriminator, parameter accounting, Adam and
// checkpoint persistence.
//
// Generator layout for widths f[0..depth]:
//
//   stem   conv k s1   in      -> f[0]         full resolution, skip 0
//   down l conv k s2   f[l-1]  -> f[l]         l = 1..depth, skip l (< depth)
//   up l   upsample x2, conv k s1  f[l] -> f[l-1]
//   fuse l conv k s1   concat(up, skip l-1) 2 f[l-1] -> f[l-1]
//   head   conv k s1   f[0]    -> out, output activation
//
// Hidden layers use leaky ReLU. Switching out_channels from 3 to 6 only
// changes the head: k*k*f[0]*3 weights plus 3 biases.
//
// Discriminator layout for widths d[0..n-1]: conv k over
// concat(input, candidate), stride 2 for every layer but the last hidden one,
// then a 1-channel conv k s1 producing per-patch logits.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mti/nn/layers.hpp"
#include "mti/tensor.hpp"

namespace mti::nets {

using nn::OutputActivation;

struct NetworkConfig {
    int in_channels = 3;
    int out_channels = 3;
    int base_filters = 200;
    int depth = 5;
    int kernel_size = 3;
    int slice_size = 512;
    OutputActivation output_activation = OutputActivation::tanh;
    /// Explicit generator widths (depth + 1 entries); derived from base_filters when empty.
    std::vector<int> filters{200, 236, 384, 512, 1000, 1800};
    /// Explicit discriminator widths; derived from base_filters when empty.
    std::vector<int> disc_filters{64, 88, 136, 248, 480};
    double leaky_slope = 0.2;
    std::uint64_t seed = 0;

    bool operator==(const NetworkConfig&) const = default;
};

/// Full-scale configuration whose trainable-parameter totals equal the
/// published figures for the four methods (see README).
inline NetworkConfig full_scale_config(int tasks = 1) {
    NetworkConfig c;
    c.out_channels = 3 * tasks;
    return c;
}

/// Desk-scale configuration used by the toy profile.
inline NetworkConfig toy_config(int tasks = 1) {
    NetworkConfig c;
    c.out_channels = 3 * tasks;
    c.base_filters = 4;
    c.depth = 2;
    c.slice_size = 64;
    c.filters.clear();
    c.disc_filters.clear();
    return c;
}

inline std::vector<int> generator_widths(const NetworkConfig& c) {
    if (!c.filters.empty()) return c.filters;
    std::vector<int> f;
    for (int l = 0; l <= c.depth; ++l) f.push_back(c.base_filters << std::min(l, 3));
    return f;
}

inline std::vector<int> discriminator_widths(const NetworkConfig& c) {
    if (!c.disc_filters.empty()) return c.disc_filters;
    std::vector<int> d;
    for (int i = 0; i < 4; ++i) d.push_back(c.base_filters << i);
    return d;
}

inline void validate(const NetworkConfig& c) {
    auto fail = [](const std::string& m) { throw Error("invalid network config: " + m); };
    if (c.in_channels <= 0) fail("in_channels must be positive");
    if (c.out_channels <= 0 || c.out_channels % 3 != 0) fail("out_channels must be 3 per task");
    if (c.depth < 1) fail("depth must be >= 1");
    if (c.kernel_size < 1) fail("kernel_size must be >= 1");
    if (c.slice_size <= 0 || c.slice_size % (1 << c.depth) != 0)
        fail("slice_size " + std::to_string(c.slice_size) + " not divisible by 2^" + std::to_string(c.depth));
    if (c.filters.empty() && c.base_filters <= 0) fail("base_filters must be positive");
    if (!c.filters.empty() && static_cast<int>(c.filters.size()) != c.depth + 1)
        fail("filters needs depth + 1 entries");
    for (int f : generator_widths(c))
        if (f <= 0) fail("filter widths must be positive");
    const auto d = discriminator_widths(c);
    if (d.empty()) fail("discriminator needs at least one hidden layer");
    for (int f : d)
        if (f <= 0) fail("discriminator widths must be positive");
    if ((c.slice_size >> (static_cast<int>(d.size()) - 1)) < 1) fail("discriminator downsamples below one pixel");
}

/// Layer geometry; the single source of truth for construction and counting.
struct LayerShape {
    std::string name;
    int in = 0;
    int out = 0;
    int kernel = 3;
    int stride = 1;

    [[nodiscard]] std::size_t parameters() const {
        return static_cast<std::size_t>(kernel) * kernel * in * out + out;
    }
};

inline std::vector<LayerShape> generator_layers(const NetworkConfig& c) {
    validate(c);
    const auto f = generator_widths(c);
    const int k = c.kernel_size;
    std::vector<LayerShape> layers{{"stem", c.in_channels, f[0], k, 1}};
    for (int l = 1; l <= c.depth; ++l) layers.push_back({"down" + std::to_string(l), f[l - 1], f[l], k, 2});
    for (int l = c.depth; l >= 1; --l) {
        layers.push_back({"up" + std::to_string(l), f[l], f[l - 1], k, 1});
        layers.push_back({"fuse" + std::to_string(l - 1), 2 * f[l - 1], f[l - 1], k, 1});
    }
    layers.push_back({"head", f[0], c.out_channels, k, 1});
    return layers;
}

inline std::vector<LayerShape> discriminator_layers(const NetworkConfig& c) {
    validate(c);
    const auto d = discriminator_widths(c);
    const int k = c.kernel_size;
    std::vector<LayerShape> layers;
    int in = c.in_channels + c.out_channels;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const int stride = i + 1 < d.size() ? 2 : 1;
        layers.push_back({"disc" + std::to_string(i), in, d[i], k, stride});
        in = d[i];
    }
    layers.push_back({"disc_head", in, 1, k, 1});
    return layers;
}

template <typename T>
class Generator {
public:
    explicit Generator(NetworkConfig config) : config_(std::move(config)) {
        const auto shapes = generator_layers(config_);
        const int d = config_.depth;
        std::mt19937_64 rng(config_.seed);
        for (const auto& s : shapes) layers_.emplace_back(s.name, s.in, s.out, s.kernel, s.stride);
        for (auto& l : layers_) l.initialize(rng, config_.leaky_slope);
        // stem, downs, (up, fuse) pairs and head each own one activation
        acts_.assign(static_cast<std::size_t>(1 + d + 2 * d), nn::LeakyRelu<T>(static_cast<T>(config_.leaky_slope)));
        out_act_ = nn::Activation<T>(config_.output_activation);
    }

    [[nodiscard]] const NetworkConfig& config() const { return config_; }

    Tensor<T> forward(const Tensor<T>& x) {
        check_input(x);
        const int d = config_.depth;
        skip_channels_.assign(static_cast<std::size_t>(d), 0);
        std::vector<Tensor<T>> skips;
        Tensor<T> h = acts_[0].forward(layers_[0].forward(x));
        for (int l = 1; l <= d; ++l) {
            skips.push_back(h);
            h = acts_[l].forward(layers_[l].forward(h));
        }
        for (int l = d; l >= 1; --l) {
            const std::size_t up = up_index(l);
            Tensor<T> u = acts_[up].forward(layers_[up].forward(nn::upsample2x(h)));
            skip_channels_[l - 1] = u.channels();
            h = acts_[up + 1].forward(layers_[up + 1].forward(nn::concat_channels(u, skips[l - 1])));
        }
        return out_act_.forward(layers_.back().forward(h));
    }

    /// Backpropagates dL/d(output); accumulates parameter gradients and
    /// returns dL/d(input).
    Tensor<T> backward(const Tensor<T>& gy) {
        const int d = config_.depth;
        Tensor<T> g = layers_.back().backward(out_act_.backward(gy));
        std::vector<Tensor<T>> skip_grads(static_cast<std::size_t>(d));
        for (int l = 1; l <= d; ++l) {
            const std::size_t up = up_index(l);
            g = layers_[up + 1].backward(acts_[up + 1].backward(g));
            auto [gu, gs] = nn::split_channels(g, skip_channels_[l - 1]);
            skip_grads[l - 1] = std::move(gs);
            g = nn::upsample2x_backward(layers_[up].backward(acts_[up].backward(gu)));
        }
        for (int l = d; l >= 1; --l) {
            g = layers_[l].backward(acts_[l].backward(g));
            nn::add_inplace(g, skip_grads[l - 1]);
        }
        return layers_[0].backward(acts_[0].backward(g));
    }

    std::vector<nn::Param<T>*> parameters() {
        std::vector<nn::Param<T>*> out;
        for (auto& l : layers_) {
            out.push_back(&l.weight());
            out.push_back(&l.bias());
        }
        return out;
    }

    void zero_grad() {
        for (auto* p : parameters()) p->zero_grad();
    }

    [[nodiscard]] const std::vector<nn::Conv2d<T>>& layers() const { return layers_; }

private:
    [[nodiscard]] std::size_t up_index(int l) const {
        return static_cast<std::size_t>(1 + config_.depth + 2 * (config_.depth - l));
    }

    void check_input(const Tensor<T>& x) const {
        if (x.channels() != config_.in_channels)
            throw Error("generator expects " + std::to_string(config_.in_channels) + " input channels, got " +
                        std::to_string(x.channels()));
        const int m = 1 << config_.depth;
        if (x.height() % m != 0 || x.width() % m != 0)
            throw Error("generator input " + x.shape_string() + " not divisible by 2^depth");
    }

    NetworkConfig config_;
    std::vector<nn::Conv2d<T>> layers_;
    std::vector<nn::LeakyRelu<T>> acts_;
    nn::Activation<T> out_act_;
    std::vector<int> skip_channels_;
};

template <typename T>
class Discriminator {
public:
    explicit Discriminator(NetworkConfig config) : config_(std::move(config)) {
        const auto shapes = discriminator_layers(config_);
        std::mt19937_64 rng(config_.seed ^ 0x9e3779b97f4a7c15ULL);
        for (const auto& s : shapes) layers_.emplace_back(s.name, s.in, s.out, s.kernel, s.stride);
        for (auto& l : layers_) l.initialize(rng, config_.leaky_slope);
        acts_.assign(layers_.size() - 1, nn::LeakyRelu<T>(static_cast<T>(config_.leaky_slope)));
    }

    [[nodiscard]] const NetworkConfig& config() const { return config_; }
    [[nodiscard]] int input_channels() const { return config_.in_channels + config_.out_channels; }

    /// Per-patch logits for (input, candidate) pairs.
    Tensor<T> forward(const Tensor<T>& input, const Tensor<T>& candidate) {
        if (input.channels() != config_.in_channels || candidate.channels() != config_.out_channels)
            throw Error("discriminator channel layout mismatch");
        Tensor<T> h = nn::concat_channels(input, candidate);
        for (std::size_t i = 0; i + 1 < layers_.size(); ++i) h = acts_[i].forward(layers_[i].forward(h));
        return layers_.back().forward(h);
    }

    /// Returns the gradient with respect to the candidate channels.
    Tensor<T> backward(const Tensor<T>& g_logits) {
        Tensor<T> g = layers_.back().backward(g_logits);
        for (std::size_t i = layers_.size() - 1; i-- > 0;) g = layers_[i].backward(acts_[i].backward(g));
        return nn::split_channels(g, config_.in_channels).second;
    }

    std::vector<nn::Param<T>*> parameters() {
        std::vector<nn::Param<T>*> out;
        for (auto& l : layers_) {
            out.push_back(&l.weight());
            out.push_back(&l.bias());
        }
        return out;
    }

    void zero_grad() {
        for (auto* p : parameters()) p->zero_grad();
    }

    [[nodiscard]] const std::vector<nn::Conv2d<T>>& layers() const { return layers_; }

private:
    NetworkConfig config_;
    std::vector<nn::Conv2d<T>> layers_;
    std::vector<nn::LeakyRelu<T>> acts_;
};

template <typename T = float>
Generator<T> build_unet(const NetworkConfig& config) {
    return Generator<T>(config);
}

template <typename T = float>
Discriminator<T> build_discriminator(const NetworkConfig& config) {
    return Discriminator<T>(config);
}

/// Sum of element counts over all trainable arrays of a built model.
template <typename Model>
std::size_t count_parameters(const Model& model) {
    std::size_t n = 0;
    for (const auto& l : model.layers()) n += l.weight().size() + l.bias().size();
    return n;
}

/// Parameter total implied by a layer list, without allocating weights.
inline std::size_t count_parameters(const std::vector<LayerShape>& layers) {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.parameters();
    return n;
}

struct AdamOptions {
    double learning_rate = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
class Adam {
public:
    explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

    void step(const std::vector<nn::Param<T>*>& params) {
        if (m_.empty()) {
            for (auto* p : params) {
                m_.emplace_back(p->size(), 0.0);
                v_.emplace_back(p->size(), 0.0);
            }
        }
        if (m_.size() != params.size()) throw Error("optimizer parameter list changed");
        ++t_;
        const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = *params[i];
            p.ensure_grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double g = p.grad[j];
                m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g;
                v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g * g;
                const double step = opts_.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + opts_.epsilon);
                p.value[j] = static_cast<T>(p.value[j] - step);
            }
        }
    }

    [[nodiscard]] long steps() const { return t_; }

private:
    AdamOptions opts_;
    long t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

// --- config and checkpoint persistence ------------------------------------

inline nlohmann::json to_json(const NetworkConfig& c) {
    return {{"in_channels", c.in_channels},   {"out_channels", c.out_channels},
            {"base_filters", c.base_filters}, {"depth", c.depth},
            {"kernel_size", c.kernel_size},   {"slice_size", c.slice_size},
            {"output_activation", std::string(nn::to_string(c.output_activation))},
            {"filters", c.filters},           {"disc_filters", c.disc_filters},
            {"leaky_slope", c.leaky_slope},   {"seed", c.seed}};
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
    NetworkConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.out_channels = j.at("out_channels").get<int>();
    c.base_filters = j.at("base_filters").get<int>();
    c.depth = j.at("depth").get<int>();
    c.kernel_size = j.at("kernel_size").get<int>();
    c.slice_size = j.at("slice_size").get<int>();
    c.output_activation = nn::parse_activation(j.at("output_activation").get<std::string>());
    c.filters = j.at("filters").get<std::vector<int>>();
    c.disc_filters = j.at("disc_filters").get<std::vector<int>>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

inline constexpr char kCheckpointMagic[8] = {'M', 'T', 'I', 'C', 'K', 'P', 'T', '1'};

/// Binary checkpoint: magic, u64 array count, then per array u64 length
/// followed by float32 values. A JSON sidecar `<path>.json` records the
/// network config and parameter count.
template <typename Model>
void save_checkpoint(const std::filesystem::path& path, Model& model) {
    std::filesystem::create_directories(path.parent_path());
    const auto params = model.parameters();
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write checkpoint " + path.string());
        out.write(kCheckpointMagic, 8);
        const std::uint64_t count = params.size();
        out.write(reinterpret_cast<const char*>(&count), 8);
        for (const auto* p : params) {
            const std::uint64_t n = p->size();
            out.write(reinterpret_cast<const char*>(&n), 8);
            std::vector<float> buf(p->value.begin(), p->value.end());
            out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
        }
        if (!out) throw Error("short write to " + path.string());
    }
    const nlohmann::json manifest{{"network", to_json(model.config())},
                                  {"param_count", count_parameters(model)}};
    std::ofstream side(path.string() + ".json", std::ios::trunc);
    side << manifest.dump(2) << '\n';
}

template <typename Model>
void load_checkpoint(const std::filesystem::path& path, Model& model) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw Error(path.string() + ": not a checkpoint");
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 8);
    const auto params = model.parameters();
    if (count != params.size()) throw Error(path.string() + ": checkpoint does not match architecture");
    for (auto* p : params) {
        std::uint64_t n = 0;
        in.read(reinterpret_cast<char*>(&n), 8);
        if (n != p->size()) throw Error(path.string() + ": array size mismatch for " + p->name);
        std::vector<float> buf(n);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
        if (!in) throw Error(path.string() + ": truncated checkpoint");
        std::copy(buf.begin(), buf.end(), p->value.begin());
    }
}

}  // namespace mti::nets
