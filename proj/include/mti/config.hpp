#pragma once

// Resolved experiment configuration.
//
// Configuration files are JSON objects nested by section, e.g.
//
//   { "train": { "batch_size": 10 }, "bias": { "mode": "additive" } }
//
// Resolution order is defaults <- toy profile (when run.toy is true) <- file
// <- command-line overrides. Every key must appear in the schema below;
// unknown keys and type mismatches are errors.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mti/biasfield.hpp"
#include "mti/dataset.hpp"
#include "mti/nets.hpp"
#include "mti/trainer.hpp"

namespace mti::config {

using nlohmann::json;

enum class Kind { integer, number, boolean, string, int_list, string_list, object_list };

struct KeySpec {
    Kind kind;
    bool nullable = false;
};

/// Flat schema of dotted keys.
inline const std::map<std::string, KeySpec>& schema() {
    static const std::map<std::string, KeySpec> s{
        {"data.root", {Kind::string}},
        {"data.strict_dims", {Kind::boolean}},
        {"data.expected_dims", {Kind::int_list}},
        {"data.subjects", {Kind::string_list, true}},
        {"data.label_scheme", {Kind::string}},
        {"augment.variants", {Kind::object_list}},
        {"augment.rotation_jitter_deg", {Kind::number}},
        {"augment.seed", {Kind::integer}},
        {"augment.max_rotation_deg", {Kind::number}},
        {"augment.min_zoom", {Kind::number}},
        {"augment.max_zoom", {Kind::number}},
        {"augment.max_translate", {Kind::number}},
        {"bias.mode", {Kind::string}},
        {"bias.amplitude", {Kind::number}},
        {"bias.coeff_table_path", {Kind::string, true}},
        {"network.in_channels", {Kind::integer}},
        {"network.base_filters", {Kind::integer}},
        {"network.depth", {Kind::integer}},
        {"network.kernel_size", {Kind::integer}},
        {"network.slice_size", {Kind::integer}},
        {"network.output_activation", {Kind::string}},
        {"network.filters", {Kind::int_list}},
        {"network.disc_filters", {Kind::int_list}},
        {"network.leaky_slope", {Kind::number}},
        {"train.learning_rate", {Kind::number}},
        {"train.batch_size", {Kind::integer}},
        {"train.max_epochs", {Kind::integer}},
        {"train.early_stop_l1", {Kind::number}},
        {"train.l1_weight", {Kind::number}},
        {"train.disc_win_patience", {Kind::integer}},
        {"train.beta1", {Kind::number, true}},
        {"train.beta2", {Kind::number}},
        {"run.out", {Kind::string}},
        {"run.workers", {Kind::integer}},
        {"run.seed", {Kind::integer}},
        {"run.toy", {Kind::boolean}},
        {"toy.subjects", {Kind::integer}},
        {"toy.slices", {Kind::integer}},
        {"toy.source_size", {Kind::integer}},
    };
    return s;
}

/// Paper hyperparameters and full-scale network widths.
inline json defaults() {
    const nets::NetworkConfig net = nets::full_scale_config();
    json variants = json::array();
    for (const auto& a : data::default_augmentations())
        variants.push_back({{"rotation_deg", a.rotation_deg},
                            {"zoom", a.zoom_factor},
                            {"translate", {a.translate_xy[0], a.translate_xy[1]}}});
    const data::AugmentationBounds bounds;
    return {
        {"data",
         {{"root", "data"}, {"strict_dims", true}, {"expected_dims", {40, 240, 240}}, {"subjects", nullptr},
          {"label_scheme", "auto"}}},
        {"augment",
         {{"variants", variants},
          {"rotation_jitter_deg", 0.0},
          {"seed", 0},
          {"max_rotation_deg", bounds.max_rotation_deg},
          {"min_zoom", bounds.min_zoom},
          {"max_zoom", bounds.max_zoom},
          {"max_translate", bounds.max_translate}}},
        {"bias", {{"mode", "multiplicative"}, {"amplitude", bias::kDefaultAmplitude}, {"coeff_table_path", nullptr}}},
        {"network",
         {{"in_channels", net.in_channels},
          {"base_filters", net.base_filters},
          {"depth", net.depth},
          {"kernel_size", net.kernel_size},
          {"slice_size", net.slice_size},
          {"output_activation", "tanh"},
          {"filters", net.filters},
          {"disc_filters", net.disc_filters},
          {"leaky_slope", net.leaky_slope}}},
        {"train",
         {{"learning_rate", 2e-4},
          {"batch_size", 20},
          {"max_epochs", 500},
          {"early_stop_l1", 0.01},
          {"l1_weight", 10.0},
          {"disc_win_patience", 10},
          {"beta1", nullptr},
          {"beta2", 0.999}}},
        {"run", {{"out", "runs"}, {"workers", 1}, {"seed", 0}, {"toy", false}}},
        {"toy", {{"subjects", 2}, {"slices", 16}, {"source_size", 64}}},
    };
}

/// Desk-scale profile layered over the defaults when run.toy is set.
inline json toy_profile() {
    return {
        {"network", {{"slice_size", 64}, {"base_filters", 4}, {"depth", 2}, {"filters", json::array()},
                     {"disc_filters", json::array()}}},
        {"train", {{"max_epochs", 200}, {"learning_rate", 2e-3}, {"batch_size", 2}}},
    };
}

namespace detail {

inline bool matches(const json& v, const KeySpec& spec) {
    if (v.is_null()) return spec.nullable;
    switch (spec.kind) {
        case Kind::integer: return v.is_number_integer();
        case Kind::number: return v.is_number();
        case Kind::boolean: return v.is_boolean();
        case Kind::string: return v.is_string();
        case Kind::int_list:
            return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number_integer(); });
        case Kind::string_list:
            return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); });
        case Kind::object_list:
            return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_object(); });
    }
    return false;
}

inline const char* kind_name(Kind k) {
    switch (k) {
        case Kind::integer: return "integer";
        case Kind::number: return "number";
        case Kind::boolean: return "boolean";
        case Kind::string: return "string";
        case Kind::int_list: return "list of integers";
        case Kind::string_list: return "list of strings";
        case Kind::object_list: return "list of objects";
    }
    return "?";
}

inline void set_checked(json& tree, const std::string& key, const json& value) {
    const auto it = schema().find(key);
    if (it == schema().end()) throw Error("unknown config key '" + key + "'");
    if (!matches(value, it->second))
        throw Error("config key '" + key + "' expects " + kind_name(it->second.kind) +
                    (it->second.nullable ? " or null" : "") + ", got " + value.dump());
    tree[json::json_pointer("/" + key.substr(0, key.find('.')) + "/" + key.substr(key.find('.') + 1))] = value;
}

/// Applies a nested JSON object onto the tree, validating every leaf.
inline void merge(json& tree, const json& layer, const std::string& origin) {
    if (!layer.is_object()) throw Error(origin + ": configuration must be a JSON object");
    for (const auto& [section, body] : layer.items()) {
        if (!body.is_object()) throw Error(origin + ": unknown config key '" + section + "'");
        for (const auto& [name, value] : body.items()) set_checked(tree, section + "." + name, value);
    }
}

/// Parses a command-line override value: JSON when it parses, else a string.
inline json parse_override_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error&) {
        return text;
    }
}

}  // namespace detail

struct Resolved {
    json tree;

    data::LoadOptions load;
    std::string data_root;
    std::optional<std::vector<std::string>> subjects;
    std::vector<data::AugmentationParams> augmentations;
    data::AugmentationBounds bounds;
    bias::Mode bias_mode = bias::Mode::multiplicative;
    bias::FieldOptions bias_fields;
    nets::NetworkConfig network;
    train::TrainConfig train;
    std::string out;
    int workers = 1;
    std::uint64_t seed = 0;
    bool toy = false;
    int toy_subjects = 2;
    int toy_slices = 16;
    int toy_source_size = 64;
};

inline Resolved materialize(const json& t) {
    Resolved r;
    r.tree = t;
    const auto& d = t.at("data");
    r.data_root = d.at("root").get<std::string>();
    r.load.strict = d.at("strict_dims").get<bool>();
    const auto dims = d.at("expected_dims").get<std::vector<int>>();
    if (dims.size() != 3) throw Error("data.expected_dims needs 3 entries");
    r.load.expected_dims = {dims[0], dims[1], dims[2]};
    const auto scheme = d.at("label_scheme").get<std::string>();
    if (scheme == "auto") r.load.labels = data::LabelScheme::automatic;
    else if (scheme == "canonical") r.load.labels = data::LabelScheme::canonical;
    else if (scheme == "mrbrains18") r.load.labels = data::LabelScheme::mrbrains18;
    else throw Error("data.label_scheme must be auto, canonical or mrbrains18");
    if (!d.at("subjects").is_null()) r.subjects = d.at("subjects").get<std::vector<std::string>>();

    const auto& a = t.at("augment");
    const auto seed = a.at("seed").get<std::uint64_t>();
    std::uint64_t i = 0;
    for (const auto& v : a.at("variants")) {
        data::AugmentationParams p;
        p.rotation_deg = v.value("rotation_deg", 0.0);
        p.zoom_factor = v.value("zoom", 1.0);
        const auto tr = v.value("translate", std::vector<double>{0.0, 0.0});
        if (tr.size() != 2) throw Error("augment.variants translate needs 2 entries");
        p.translate_xy = {tr[0], tr[1]};
        p.seed = seed + i++;
        for (const auto& [k, _] : v.items())
            if (k != "rotation_deg" && k != "zoom" && k != "translate")
                throw Error("unknown config key 'augment.variants[]." + k + "'");
        r.augmentations.push_back(p);
    }
    if (r.augmentations.empty()) throw Error("augment.variants must not be empty");
    r.augmentations = data::jitter_augmentations(r.augmentations, a.at("rotation_jitter_deg").get<double>());
    r.bounds = {a.at("max_rotation_deg").get<double>(), a.at("min_zoom").get<double>(),
                a.at("max_zoom").get<double>(), a.at("max_translate").get<double>()};
    for (const auto& p : r.augmentations) data::validate(p, r.bounds);

    const auto& b = t.at("bias");
    r.bias_mode = bias::parse_mode(b.at("mode").get<std::string>());
    r.bias_fields.amplitude = b.at("amplitude").get<double>();
    if (!b.at("coeff_table_path").is_null())
        r.bias_fields.table = bias::load_coefficient_table(b.at("coeff_table_path").get<std::string>());

    const auto& n = t.at("network");
    r.network.in_channels = n.at("in_channels").get<int>();
    r.network.base_filters = n.at("base_filters").get<int>();
    r.network.depth = n.at("depth").get<int>();
    r.network.kernel_size = n.at("kernel_size").get<int>();
    r.network.slice_size = n.at("slice_size").get<int>();
    r.network.output_activation = nn::parse_activation(n.at("output_activation").get<std::string>());
    r.network.filters = n.at("filters").get<std::vector<int>>();
    r.network.disc_filters = n.at("disc_filters").get<std::vector<int>>();
    r.network.leaky_slope = n.at("leaky_slope").get<double>();
    nets::validate(r.network);

    const auto& tr = t.at("train");
    r.train.learning_rate = tr.at("learning_rate").get<double>();
    r.train.batch_size = tr.at("batch_size").get<int>();
    r.train.max_epochs = tr.at("max_epochs").get<int>();
    r.train.early_stop_l1 = tr.at("early_stop_l1").get<double>();
    r.train.l1_weight = tr.at("l1_weight").get<double>();
    r.train.disc_win_patience = tr.at("disc_win_patience").get<int>();
    if (!tr.at("beta1").is_null()) r.train.beta1 = tr.at("beta1").get<double>();
    r.train.beta2 = tr.at("beta2").get<double>();

    const auto& run = t.at("run");
    r.out = run.at("out").get<std::string>();
    r.workers = run.at("workers").get<int>();
    if (r.workers < 1) throw Error("run.workers must be >= 1");
    r.seed = run.at("seed").get<std::uint64_t>();
    r.train.seed = r.seed;
    r.network.seed = r.seed;
    r.toy = run.at("toy").get<bool>();
    r.toy_subjects = t.at("toy").at("subjects").get<int>();
    r.toy_slices = t.at("toy").at("slices").get<int>();
    r.toy_source_size = t.at("toy").at("source_size").get<int>();
    if (r.toy_subjects < 2 || r.toy_slices < 1 || r.toy_source_size < 1)
        throw Error("toy profile needs >= 2 subjects and positive sizes");
    train::validate(r.train);
    return r;
}

/// Resolves a configuration. `path` may be empty (defaults only); overrides
/// map dotted keys to JSON-encoded values and win over the file.
inline Resolved load_config(const std::filesystem::path& path, const std::map<std::string, std::string>& overrides = {}) {
    json file = json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open config file " + path.string());
        const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
            try {
                file = json::parse(text);
            } catch (const json::parse_error& e) {
                throw Error("config file " + path.string() + ": " + e.what());
            }
        }
    }
    std::map<std::string, json> parsed;
    for (const auto& [k, v] : overrides) parsed[k] = detail::parse_override_value(v);

    // the toy switch can come from the file or a flag and decides the profile layer
    bool toy = false;
    if (file.contains("run") && file["run"].is_object() && file["run"].contains("toy") && file["run"]["toy"].is_boolean())
        toy = file["run"]["toy"].get<bool>();
    if (auto it = parsed.find("run.toy"); it != parsed.end() && it->second.is_boolean()) toy = it->second.get<bool>();

    json tree = defaults();
    if (toy) detail::merge(tree, toy_profile(), "toy profile");
    detail::merge(tree, file, path.string());
    for (const auto& [k, v] : parsed) detail::set_checked(tree, k, v);
    return materialize(tree);
}

}  // namespace mti::config
