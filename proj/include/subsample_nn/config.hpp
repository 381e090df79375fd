#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "subsample_nn/alsh.hpp"
#include "subsample_nn/errors.hpp"
#include "subsample_nn/model.hpp"
#include "subsample_nn/policies.hpp"

namespace snn {

/// Invalid configuration: detected before any compute starts.
class ConfigError : public Error {
public:
    using Error::Error;
};

struct DatasetConfig {
    std::string kind = "idx"; // idx | synth
    std::string images;
    std::string labels;
    std::size_t train = 5000;
    std::size_t test = 1000;
    std::size_t validation = 500;
    // synth only
    std::size_t samples = 2000;
    std::size_t features = 20;
    std::size_t classes = 2;
    double separation = 10.0;
};

struct ModelConfig {
    std::size_t hidden_layers = 3;
    std::size_t width = 1000;
    std::string activation = "relu";
};

struct PolicyConfig {
    std::string kind = "exact"; // exact | dropout | adaptive_dropout | alsh | mc
    double p_keep = 0.05;
    double alpha = 1.0;
    double beta = 0.0;
    std::size_t K = 6;
    std::size_t L = 5;
    std::size_t m = 3;
    double C = 0.83;
    std::size_t k_samples = 10;
};

struct OptimizerConfig {
    std::string kind = "adam"; // adam | sgd
    std::optional<double> learning_rate; // default depends on policy and batch size
};

struct RunConfig {
    DatasetConfig dataset;
    ModelConfig model;
    PolicyConfig policy;
    OptimizerConfig optimizer;
    std::size_t epochs = 50;
    std::optional<std::size_t> batch_size; // default: 20 under mc, else 1
    std::uint64_t seed = 0;
    std::string out = "run";

    std::size_t effective_batch_size() const {
        return batch_size.value_or(policy.kind == "mc" ? 20 : 1);
    }
    /// 1e-4 for MC at batch size 1, otherwise 1e-3.
    double effective_learning_rate() const {
        if (optimizer.learning_rate) {
            return *optimizer.learning_rate;
        }
        return policy.kind == "mc" && effective_batch_size() == 1 ? 1e-4 : 1e-3;
    }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) {
        throw ConfigError(where + ": expected an object");
    }
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
    }
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& dst, const std::string& where) {
    if (!j.contains(key)) {
        return;
    }
    try {
        if constexpr (std::is_unsigned_v<T>) {
            if (!j.at(key).is_number_unsigned()) {
                throw ConfigError(where + "." + key + ": expected a nonnegative integer");
            }
        }
        dst = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
    if (p.empty()) {
        return p;
    }
    const std::filesystem::path path(p);
    return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

} // namespace detail

/// Converts the JSON document into a config; relative dataset paths and
/// `out` resolve against `base_dir`.
inline RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".") {
    using detail::read_field;
    RunConfig c;
    detail::reject_unknown(j, {"dataset", "model", "policy", "optimizer", "epochs", "batch_size", "seed", "out"},
                           "config");
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        detail::reject_unknown(d,
                               {"kind", "images", "labels", "train", "test", "validation", "samples", "features",
                                "classes", "separation"},
                               "dataset");
        read_field(d, "kind", c.dataset.kind, "dataset");
        read_field(d, "images", c.dataset.images, "dataset");
        read_field(d, "labels", c.dataset.labels, "dataset");
        read_field(d, "train", c.dataset.train, "dataset");
        read_field(d, "test", c.dataset.test, "dataset");
        read_field(d, "validation", c.dataset.validation, "dataset");
        read_field(d, "samples", c.dataset.samples, "dataset");
        read_field(d, "features", c.dataset.features, "dataset");
        read_field(d, "classes", c.dataset.classes, "dataset");
        read_field(d, "separation", c.dataset.separation, "dataset");
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::reject_unknown(m, {"hidden_layers", "width", "activation"}, "model");
        read_field(m, "hidden_layers", c.model.hidden_layers, "model");
        read_field(m, "width", c.model.width, "model");
        read_field(m, "activation", c.model.activation, "model");
    }
    if (j.contains("policy")) {
        const auto& p = j.at("policy");
        detail::reject_unknown(p, {"kind", "p_keep", "alpha", "beta", "K", "L", "m", "C", "k_samples"}, "policy");
        read_field(p, "kind", c.policy.kind, "policy");
        read_field(p, "p_keep", c.policy.p_keep, "policy");
        read_field(p, "alpha", c.policy.alpha, "policy");
        read_field(p, "beta", c.policy.beta, "policy");
        read_field(p, "K", c.policy.K, "policy");
        read_field(p, "L", c.policy.L, "policy");
        read_field(p, "m", c.policy.m, "policy");
        read_field(p, "C", c.policy.C, "policy");
        read_field(p, "k_samples", c.policy.k_samples, "policy");
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        detail::reject_unknown(o, {"kind", "learning_rate"}, "optimizer");
        read_field(o, "kind", c.optimizer.kind, "optimizer");
        if (o.contains("learning_rate")) {
            double lr = 0.0;
            read_field(o, "learning_rate", lr, "optimizer");
            c.optimizer.learning_rate = lr;
        }
    }
    read_field(j, "epochs", c.epochs, "config");
    if (j.contains("batch_size")) {
        std::size_t b = 0;
        read_field(j, "batch_size", b, "config");
        c.batch_size = b;
    }
    read_field(j, "seed", c.seed, "config");
    read_field(j, "out", c.out, "config");

    c.dataset.images = detail::resolve_path(c.dataset.images, base_dir);
    c.dataset.labels = detail::resolve_path(c.dataset.labels, base_dir);
    c.out = detail::resolve_path(c.out, base_dir);
    return c;
}

/// Applies `key.path=value` to the document. The value is parsed as JSON
/// when possible and taken as a string otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("--set expects key=value, got '" + assignment + "'");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    std::string pointer;
    std::size_t start = 0;
    while (start <= key.size()) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) {
            throw ConfigError("--set: empty path component in '" + key + "'");
        }
        pointer += "/" + part;
        if (dot == std::string::npos) {
            break;
        }
        start = dot + 1;
    }
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) {
        value = raw;
    }
    doc[nlohmann::json::json_pointer(pointer)] = value;
}

inline nlohmann::json load_config_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path);
    }
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) {
        throw ConfigError("config " + path + " is not valid JSON");
    }
    return j;
}

inline Activation parse_activation(const std::string& s) {
    if (s == "relu") {
        return Activation::ReLU;
    }
    if (s == "linear") {
        return Activation::Linear;
    }
    throw ConfigError("model.activation: expected relu or linear, got '" + s + "'");
}

inline OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "adam") {
        return OptimizerKind::Adam;
    }
    if (s == "sgd") {
        return OptimizerKind::Sgd;
    }
    throw ConfigError("optimizer.kind: expected adam or sgd, got '" + s + "'");
}

inline ComputePolicy make_policy(const PolicyConfig& p, std::uint64_t seed) {
    if (p.kind == "exact") {
        return ComputePolicy::exact();
    }
    if (p.kind == "dropout") {
        return ComputePolicy::dropout(p.p_keep);
    }
    if (p.kind == "adaptive_dropout") {
        return ComputePolicy::adaptive_dropout(p.alpha, p.beta);
    }
    if (p.kind == "alsh") {
        return ComputePolicy::alsh(AlshParams{p.K, p.L, p.m, p.C}, seed);
    }
    if (p.kind == "mc") {
        return ComputePolicy::mc_backprop(p.k_samples);
    }
    throw ConfigError("policy.kind: expected exact, dropout, adaptive_dropout, alsh or mc, got '" + p.kind + "'");
}

/// Checks every module precondition the run would hit.
inline void validate(const RunConfig& c) {
    const auto& d = c.dataset;
    if (d.kind == "idx") {
        if (d.images.empty() || d.labels.empty()) {
            throw ConfigError("dataset: idx datasets need images and labels paths");
        }
        for (const auto& p : {d.images, d.labels}) {
            if (!std::filesystem::is_regular_file(p)) {
                throw ConfigError("dataset: no such file " + p);
            }
        }
    } else if (d.kind == "synth") {
        if (d.samples == 0 || d.features == 0 || d.classes == 0) {
            throw ConfigError("dataset: synth counts must be positive");
        }
        if (!(d.separation > 0.0)) {
            throw ConfigError("dataset.separation must be positive");
        }
        if (d.train + d.test + d.validation > d.samples) {
            throw ConfigError("dataset: train + test + validation exceeds synth samples");
        }
    } else {
        throw ConfigError("dataset.kind: expected idx or synth, got '" + d.kind + "'");
    }
    if (d.train == 0) {
        throw ConfigError("dataset.train must be >= 1");
    }
    if (c.model.width == 0) {
        throw ConfigError("model.width must be >= 1");
    }
    parse_activation(c.model.activation);
    parse_optimizer(c.optimizer.kind);
    if (c.effective_batch_size() == 0) {
        throw ConfigError("batch_size must be >= 1");
    }
    const double lr = c.effective_learning_rate();
    if (!(lr > 0.0) || !std::isfinite(lr)) {
        throw ConfigError("optimizer.learning_rate must be positive");
    }
    const auto& p = c.policy;
    make_policy(p, c.seed);
    if (p.kind == "dropout" && !(p.p_keep > 0.0 && p.p_keep <= 1.0)) {
        throw ConfigError("policy.p_keep must lie in (0, 1]");
    }
    if (p.kind == "adaptive_dropout" && (!std::isfinite(p.alpha) || !std::isfinite(p.beta))) {
        throw ConfigError("policy.alpha and policy.beta must be finite");
    }
    if (p.kind == "alsh") {
        if (c.model.hidden_layers == 0) {
            throw ConfigError("policy alsh needs at least one hidden layer");
        }
        try {
            AlshParams{p.K, p.L, p.m, p.C}.validate();
        } catch (const ParameterError& e) {
            throw ConfigError(std::string("policy: ") + e.what());
        }
    }
    if (p.kind == "mc" && (p.k_samples < 1 || (c.model.hidden_layers > 0 && p.k_samples > c.model.width))) {
        throw ConfigError("policy.k_samples must lie in [1, model.width]");
    }
}

inline nlohmann::json config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["dataset"] = {{"kind", c.dataset.kind},
                    {"images", c.dataset.images},
                    {"labels", c.dataset.labels},
                    {"train", c.dataset.train},
                    {"test", c.dataset.test},
                    {"validation", c.dataset.validation},
                    {"samples", c.dataset.samples},
                    {"features", c.dataset.features},
                    {"classes", c.dataset.classes},
                    {"separation", c.dataset.separation}};
    j["model"] = {{"hidden_layers", c.model.hidden_layers},
                  {"width", c.model.width},
                  {"activation", c.model.activation}};
    j["policy"] = {{"kind", c.policy.kind}, {"p_keep", c.policy.p_keep}, {"alpha", c.policy.alpha},
                   {"beta", c.policy.beta}, {"K", c.policy.K},           {"L", c.policy.L},
                   {"m", c.policy.m},       {"C", c.policy.C},           {"k_samples", c.policy.k_samples}};
    j["optimizer"] = {{"kind", c.optimizer.kind}, {"learning_rate", c.effective_learning_rate()}};
    j["epochs"] = c.epochs;
    j["batch_size"] = c.effective_batch_size();
    j["seed"] = c.seed;
    return j;
}

} // namespace snn
