#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "subsample_nn/analysis.hpp"
#include "subsample_nn/checkpoint.hpp"
#include "subsample_nn/config.hpp"
#include "subsample_nn/data.hpp"
#include "subsample_nn/model.hpp"
#include "subsample_nn/policies.hpp"
#include "subsample_nn/train.hpp"

namespace snn {

inline Split load_split(const RunConfig& c) {
    const auto& d = c.dataset;
    const Dataset full = d.kind == "synth" ? synth_blobs(d.samples, d.features, d.classes, d.separation, c.seed)
                                           : load_idx(d.images, d.labels);
    return split(full, d.train, d.test, d.validation, c.seed);
}

inline std::vector<std::size_t> layer_dims_for(const RunConfig& c, std::size_t n_inputs, std::size_t n_classes) {
    std::vector<std::size_t> dims{n_inputs};
    for (std::size_t l = 0; l < c.model.hidden_layers; ++l) {
        dims.push_back(c.model.width);
    }
    dims.push_back(n_classes);
    return dims;
}

/// Summary of a run. Holds no wall-clock values, so it is a pure function
/// of the configuration.
inline nlohmann::json summary_json(const RunConfig& c, const MlpModel& model, const TrainReport& r) {
    nlohmann::json epochs = nlohmann::json::array();
    for (std::size_t e = 0; e < r.epochs.size(); ++e) {
        epochs.push_back({{"epoch", e + 1},
                          {"validation_accuracy", r.validation_accuracy[e + 1]},
                          {"train_loss", r.train_loss[e]},
                          {"feedforward_flops", r.epochs[e].feedforward_flops},
                          {"backprop_flops", r.epochs[e].backprop_flops},
                          {"overhead_flops", r.epochs[e].overhead_flops}});
    }
    nlohmann::json out;
    out["config"] = config_to_json(c);
    out["layer_dims"] = model.layer_dims;
    out["policy"] = r.policy;
    out["accuracy"] = r.test_accuracy;
    out["initial_validation_accuracy"] = r.validation_accuracy.front();
    out["validation_accuracy"] = r.validation_accuracy;
    out["epochs"] = epochs;
    out["flops"] = {{"feedforward", r.totals.feedforward_flops},
                    {"backprop", r.totals.backprop_flops},
                    {"overhead", r.totals.overhead_flops},
                    {"total", r.totals.total_flops()}};
    out["distinct_predicted_labels"] = r.labels.distinct;
    out["predicted_label_ratios"] = r.labels.ratios;
    if (r.policy == "alsh") {
        out["alsh"] = {{"mean_active_fraction", r.policy_stats.mean_active_fraction()},
                       {"queries", r.policy_stats.alsh_queries},
                       {"fallbacks", r.policy_stats.alsh_fallbacks},
                       {"rebuilds", r.policy_stats.alsh_rebuilds}};
    }
    return out;
}

struct RunResult {
    MlpModel model;
    TrainReport report;
    nlohmann::json summary;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << text;
}

/// Trains per `c` and writes summary.json, timing.csv, confusion.csv,
/// labels.csv, checkpoint.bin and checkpoint.json into c.out.
inline RunResult run_training(const RunConfig& c, bool write_outputs = true) {
    validate(c);
    const Split data = load_split(c);
    const std::size_t n_classes = data.train.n_classes;
    RunResult res;
    const Activation act = parse_activation(c.model.activation);
    res.model = init_weights(layer_dims_for(c, data.train.n_features(), n_classes), InitScheme::HeUniform, c.seed, act);
    ComputePolicy policy = make_policy(c.policy, c.seed);
    Optimizer opt;
    opt.kind = parse_optimizer(c.optimizer.kind);
    opt.learning_rate = c.effective_learning_rate();
    res.report = train(res.model, data, policy, opt, TrainOptions{c.epochs, c.effective_batch_size(), c.seed});
    res.summary = summary_json(c, res.model, res.report);

    if (write_outputs) {
        const std::filesystem::path dir(c.out);
        std::filesystem::create_directories(dir);
        write_text(dir / "summary.json", res.summary.dump(2) + "\n");
        std::ostringstream timing;
        write_timing_csv(res.report, timing);
        write_text(dir / "timing.csv", timing.str());
        std::ostringstream cm;
        write_confusion_csv(res.report.confusion, cm);
        write_text(dir / "confusion.csv", cm.str());
        std::ostringstream labels;
        write_labels_csv(res.report.confusion, labels);
        write_text(dir / "labels.csv", labels.str());
        write_checkpoint(res.model, (dir / "checkpoint.bin").string());
        const nlohmann::json sidecar = {{"format_version", kCheckpointVersion},
                                        {"layer_dims", res.model.layer_dims},
                                        {"activation", to_string(res.model.hidden_activation)},
                                        {"seed", c.seed},
                                        {"policy", res.report.policy}};
        write_text(dir / "checkpoint.json", sidecar.dump(2) + "\n");
    }
    return res;
}

} // namespace snn
