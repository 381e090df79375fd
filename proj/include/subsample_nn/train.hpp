#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "subsample_nn/analysis.hpp"
#include "subsample_nn/data.hpp"
#include "subsample_nn/errors.hpp"
#include "subsample_nn/linalg.hpp"
#include "subsample_nn/model.hpp"
#include "subsample_nn/policies.hpp"
#include "subsample_nn/rng.hpp"

namespace snn {

/// Cost of one epoch split by phase. Policy overhead (probability
/// computation, hashing, mask drawing, table rebuilds) is excluded from
/// the feedforward and backprop figures.
struct PhaseCost {
    double feedforward_seconds = 0.0;
    double backprop_seconds = 0.0;
    double overhead_seconds = 0.0;
    double total_seconds = 0.0; // also covers batching and the optimizer step
    std::uint64_t feedforward_flops = 0;
    std::uint64_t backprop_flops = 0;
    std::uint64_t overhead_flops = 0;

    std::uint64_t total_flops() const { return feedforward_flops + backprop_flops + overhead_flops; }

    PhaseCost& operator+=(const PhaseCost& o) {
        feedforward_seconds += o.feedforward_seconds;
        backprop_seconds += o.backprop_seconds;
        overhead_seconds += o.overhead_seconds;
        total_seconds += o.total_seconds;
        feedforward_flops += o.feedforward_flops;
        backprop_flops += o.backprop_flops;
        overhead_flops += o.overhead_flops;
        return *this;
    }
};

struct TrainReport {
    std::string policy;
    std::vector<double> validation_accuracy; // [0] before training, then one per epoch
    std::vector<double> train_loss;          // mean batch loss per epoch
    std::vector<PhaseCost> epochs;
    PhaseCost totals;
    double test_accuracy = 0.0;
    ConfusionMatrix confusion;
    LabelConcentration labels;
    PolicyStats policy_stats;
};

struct TrainOptions {
    std::size_t epochs = 5;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
};

namespace detail {

inline double accuracy_on(const MlpModel& model, ComputePolicy& policy, const Dataset& ds) {
    if (ds.size() == 0) {
        return 0.0;
    }
    const auto pred = predict(model, policy, ds.features);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        hit += pred[i] == ds.labels[i] ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(ds.size());
}

inline double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

} // namespace detail

/// Trains `model` in place. batch_size 1 is SGD, larger is mini-batch.
/// Every random choice derives from `seed`: epoch e shuffles with seed ^ e,
/// and the policy draws from its own stream.
inline TrainReport train(MlpModel& model, const Split& data, ComputePolicy& policy, Optimizer& opt,
                         const TrainOptions& options) {
    if (options.batch_size < 1) {
        throw ParameterError("train: batch_size must be >= 1");
    }
    model.validate();
    data.train.validate();
    if (data.train.n_features() != model.n_inputs() && data.train.size() > 0) {
        throw DimensionError("train: dataset has " + std::to_string(data.train.n_features()) +
                             " features, model expects " + std::to_string(model.n_inputs()));
    }
    bind_policy(policy, model);

    TrainReport report;
    report.policy = policy.name();
    report.validation_accuracy.push_back(detail::accuracy_on(model, policy, data.validation));

    Rng policy_rng(options.seed, 0x9011);
    const std::size_t n = data.train.size();
    const std::size_t n_features = data.train.n_features();
    std::uint64_t samples_seen = 0;

    for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(options.seed ^ epoch, 0x5f);
        shuffle_rng.shuffle(std::span<std::size_t>(order));

        PhaseCost cost;
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += options.batch_size) {
            const auto t_batch = std::chrono::steady_clock::now();
            const std::size_t rows = std::min(options.batch_size, n - start);
            Matrix x(rows, n_features);
            std::vector<Label> y(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                const auto src = data.train.features.row(order[start + r]);
                std::copy(src.begin(), src.end(), x.row(r).begin());
                y[r] = data.train.labels[order[start + r]];
            }

            const PolicyStats before_ff = policy.stats;
            const std::uint64_t f0 = flops::read();
            const auto t0 = std::chrono::steady_clock::now();
            const PolicyTrace pt = forward_with_policy(model, x, policy, policy_rng, PassMode::Train);
            const double ff_s = detail::seconds_since(t0);
            const std::uint64_t f1 = flops::read();

            const PolicyStats before_bp = policy.stats;
            const auto t1 = std::chrono::steady_clock::now();
            const Gradients grads = backward_with_policy(model, pt, y, policy, policy_rng);
            const double bp_s = detail::seconds_since(t1);
            const std::uint64_t f2 = flops::read();
            const PolicyStats after_bp = policy.stats;

            const std::uint64_t ff_over = before_bp.overhead_flops - before_ff.overhead_flops;
            const std::uint64_t bp_over = after_bp.overhead_flops - before_bp.overhead_flops;
            const double ff_over_s = before_bp.overhead_seconds - before_ff.overhead_seconds;
            const double bp_over_s = after_bp.overhead_seconds - before_bp.overhead_seconds;
            cost.feedforward_flops += (f1 - f0) - ff_over;
            cost.backprop_flops += (f2 - f1) - bp_over;
            cost.feedforward_seconds += ff_s - ff_over_s;
            cost.backprop_seconds += bp_s - bp_over_s;

            loss_sum += nll_loss(pt.trace, y);
            ++batches;
            step(opt, model, grads);

            samples_seen += rows;
            const PolicyStats before_rebuild = policy.stats;
            rebuild_if_due(policy, model, samples_seen);
            cost.overhead_flops += ff_over + bp_over + (policy.stats.overhead_flops - before_rebuild.overhead_flops);
            cost.overhead_seconds +=
                ff_over_s + bp_over_s + (policy.stats.overhead_seconds - before_rebuild.overhead_seconds);
            cost.total_seconds += detail::seconds_since(t_batch);
        }
        report.epochs.push_back(cost);
        report.totals += cost;
        report.train_loss.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
        report.validation_accuracy.push_back(detail::accuracy_on(model, policy, data.validation));
    }

    report.confusion = confusion(model, policy, data.test);
    report.test_accuracy = report.confusion.accuracy();
    report.labels = label_concentration(report.confusion);
    report.policy_stats = policy.stats;
    return report;
}

/// `epoch,phase,seconds,flops`; phases feedforward, backprop, overhead, total.
inline void write_timing_csv(const TrainReport& report, std::ostream& out) {
    out << "epoch,phase,seconds,flops\n";
    out.precision(9);
    for (std::size_t e = 0; e < report.epochs.size(); ++e) {
        const PhaseCost& c = report.epochs[e];
        out << e + 1 << ",feedforward," << c.feedforward_seconds << ',' << c.feedforward_flops << '\n';
        out << e + 1 << ",backprop," << c.backprop_seconds << ',' << c.backprop_flops << '\n';
        out << e + 1 << ",overhead," << c.overhead_seconds << ',' << c.overhead_flops << '\n';
        out << e + 1 << ",total," << c.total_seconds << ',' << c.total_flops() << '\n';
    }
}

} // namespace snn
