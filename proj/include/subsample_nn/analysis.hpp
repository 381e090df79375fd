#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "subsample_nn/data.hpp"
#include "subsample_nn/errors.hpp"
#include "subsample_nn/linalg.hpp"
#include "subsample_nn/model.hpp"
#include "subsample_nn/policies.hpp"
#include "subsample_nn/rng.hpp"

namespace snn {

// Error propagation through omitted terms in linear networks.
//
// An input mask for layer k has the shape of W^k: mask(i, j) != 0 means
// input i is active for node j. With e^k = a^k - abar^k (exact minus
// masked), each layer satisfies
//
//   e^k_j = sum_i e^{k-1}_i W^k_ij + sum_{i not active} abar^{k-1}_i W^k_ij.
//
// Theory code treats every layer, the last included, as linear: no softmax.

using InputMasks = std::vector<Matrix>;

struct LayerErrorProfile {
    // index k-1 holds layer k
    std::vector<Vector> exact;     // a^k
    std::vector<Vector> masked;    // abar^k
    std::vector<Vector> error;     // a^k - abar^k
    std::vector<Vector> recursion; // right-hand side of the recursion
    std::vector<Vector> ratio;     // e^k_j / abar^k_j
};

namespace detail {

inline void require_linear(const MlpModel& model, const char* op) {
    if (model.hidden_activation != Activation::Linear) {
        throw PreconditionError(std::string(op) + ": every activation must be linear");
    }
}

inline void check_masks(const MlpModel& model, const InputMasks& masks, const char* op) {
    if (masks.size() != model.n_layers()) {
        throw DimensionError(std::string(op) + ": need one mask per layer");
    }
    for (std::size_t l = 0; l < masks.size(); ++l) {
        if (masks[l].rows() != model.weights[l].rows() || masks[l].cols() != model.weights[l].cols()) {
            throw DimensionError(std::string(op) + ": mask shape differs from W at layer " + std::to_string(l + 1));
        }
    }
}

/// x W + b, with W entries dropped where mask is zero (no mask = all active).
inline Vector linear_layer(const Vector& x, const Matrix& w, const Vector& b, const Matrix* mask) {
    Vector out(w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < w.rows(); ++i) {
            if (mask == nullptr || (*mask)(i, j) != 0.0) {
                acc += x[i] * w(i, j);
            }
        }
        out[j] = acc + b[j];
    }
    return out;
}

} // namespace detail

inline LayerErrorProfile lemma1_error(const MlpModel& model, const Vector& input, const InputMasks& masks) {
    detail::require_linear(model, "lemma1_error");
    detail::check_masks(model, masks, "lemma1_error");
    if (input.size() != model.n_inputs()) {
        throw DimensionError("lemma1_error: input width mismatch");
    }
    LayerErrorProfile out;
    Vector a = input;
    Vector abar = input;
    Vector e(input.size());
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        const Matrix& w = model.weights[l];
        const Matrix& mask = masks[l];
        Vector a_next = detail::linear_layer(a, w, model.biases[l], nullptr);
        Vector abar_next = detail::linear_layer(abar, w, model.biases[l], &mask);

        Vector rec(w.cols());
        for (std::size_t j = 0; j < w.cols(); ++j) {
            double propagated = 0.0;
            double omitted = 0.0;
            for (std::size_t i = 0; i < w.rows(); ++i) {
                propagated += e[i] * w(i, j);
                if (mask(i, j) == 0.0) {
                    omitted += abar[i] * w(i, j);
                }
            }
            rec[j] = propagated + omitted;
        }

        Vector e_next(w.cols());
        Vector ratio(w.cols());
        for (std::size_t j = 0; j < w.cols(); ++j) {
            e_next[j] = a_next[j] - abar_next[j];
            ratio[j] = abar_next[j] != 0.0 ? e_next[j] / abar_next[j] : NAN;
        }
        out.exact.push_back(a_next);
        out.masked.push_back(abar_next);
        out.error.push_back(e_next);
        out.recursion.push_back(rec);
        out.ratio.push_back(ratio);
        a = std::move(a_next);
        abar = std::move(abar_next);
        // the recursion carries the directly measured error forward
        e = std::move(e_next);
    }
    return out;
}

struct Theorem1Fixture {
    MlpModel model;
    InputMasks masks;
    Vector input;
    std::size_t c = 0;
};

/// Linear net of `depth` layers of `width` nodes, weights 1/width, input of
/// ones. Node j sees a cyclic window of c*width/(c+1) active inputs, so the
/// active contribution is exactly c times the omitted one.
inline Theorem1Fixture build_theorem1_network(std::size_t c, std::size_t depth, std::size_t width) {
    if (c < 1) {
        throw ParameterError("build_theorem1_network: c must be >= 1");
    }
    if (depth < 1) {
        throw ParameterError("build_theorem1_network: depth must be >= 1");
    }
    if (width == 0 || width % (c + 1) != 0) {
        throw ParameterError("build_theorem1_network: width " + std::to_string(width) + " is not a multiple of c+1=" +
                             std::to_string(c + 1));
    }
    Theorem1Fixture fx;
    fx.c = c;
    fx.model = init_weights(std::vector<std::size_t>(depth + 1, width), InitScheme::Zeros, 0, Activation::Linear);
    const std::size_t active = c * width / (c + 1);
    for (std::size_t l = 0; l < depth; ++l) {
        for (double& v : fx.model.weights[l].span()) {
            v = 1.0 / static_cast<double>(width);
        }
        Matrix mask(width, width);
        for (std::size_t j = 0; j < width; ++j) {
            for (std::size_t t = 0; t < active; ++t) {
                mask((j + t) % width, j) = 1.0;
            }
        }
        fx.masks.push_back(std::move(mask));
    }
    fx.input = Vector(width, 1.0);
    return fx;
}

struct Theorem1Row {
    std::size_t k = 0;
    double ratio = 0.0;          // mean over nodes of e^k_j / abar^k_j
    double expected = 0.0;       // ((c+1)/c)^k - 1
    double max_rel_error = 0.0;  // worst node, ratio and a = abar((c+1)/c)^k
    double min_split_ratio = 0.0; // active / omitted contribution, worst node
    double max_split_ratio = 0.0;
};

struct Theorem1Table {
    std::size_t c = 0;
    std::vector<Theorem1Row> rows;

    bool holds(double tolerance) const {
        for (const auto& r : rows) {
            if (!(r.max_rel_error <= tolerance)) {
                return false;
            }
        }
        return true;
    }
};

inline Theorem1Table theorem1_check(const MlpModel& model, const InputMasks& masks, const Vector& input,
                                    std::size_t c) {
    detail::require_linear(model, "theorem1_check");
    detail::check_masks(model, masks, "theorem1_check");
    if (c < 1) {
        throw PreconditionError("theorem1_check: c must be >= 1");
    }
    const LayerErrorProfile prof = lemma1_error(model, input, masks);
    const double growth = static_cast<double>(c + 1) / static_cast<double>(c);

    Theorem1Table table;
    table.c = c;
    Vector abar_prev = input;
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        Theorem1Row row;
        row.k = l + 1;
        row.expected = std::pow(growth, static_cast<double>(row.k)) - 1.0;
        row.min_split_ratio = INFINITY;
        row.max_split_ratio = -INFINITY;
        const Matrix& w = model.weights[l];
        double sum = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) {
            double on = 0.0;
            double off = 0.0;
            for (std::size_t i = 0; i < w.rows(); ++i) {
                (masks[l](i, j) != 0.0 ? on : off) += abar_prev[i] * w(i, j);
            }
            const double split = off != 0.0 ? on / off : INFINITY;
            row.min_split_ratio = std::min(row.min_split_ratio, split);
            row.max_split_ratio = std::max(row.max_split_ratio, split);

            const double r = prof.ratio[l][j];
            const double scaled = prof.masked[l][j] * (row.expected + 1.0);
            const double err_ratio = std::abs(r - row.expected) / std::abs(row.expected);
            const double err_value = std::abs(prof.exact[l][j] - scaled) / std::abs(prof.exact[l][j]);
            row.max_rel_error = std::max({row.max_rel_error, err_ratio, err_value});
            if (!std::isfinite(r)) {
                row.max_rel_error = INFINITY;
            }
            sum += r;
        }
        row.ratio = sum / static_cast<double>(w.cols());
        table.rows.push_back(row);
        abar_prev = prof.masked[l];
    }
    return table;
}

inline Theorem1Table theorem1_check(const Theorem1Fixture& fx) {
    return theorem1_check(fx.model, fx.masks, fx.input, fx.c);
}

/// Rows are true labels, columns predicted labels.
struct ConfusionMatrix {
    std::size_t n_classes = 0;
    std::vector<std::uint64_t> counts; // row-major

    explicit ConfusionMatrix(std::size_t n = 0) : n_classes(n), counts(n * n, 0) {}

    std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts.at(truth * n_classes + pred); }
    std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts.at(truth * n_classes + pred); }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto v : counts) {
            t += v;
        }
        return t;
    }
    std::uint64_t trace() const {
        std::uint64_t t = 0;
        for (std::size_t i = 0; i < n_classes; ++i) {
            t += at(i, i);
        }
        return t;
    }
    double accuracy() const {
        const auto t = total();
        return t ? static_cast<double>(trace()) / static_cast<double>(t) : 0.0;
    }
    /// Predictions per label (column sums).
    std::vector<std::uint64_t> predicted_histogram() const {
        std::vector<std::uint64_t> h(n_classes, 0);
        for (std::size_t t = 0; t < n_classes; ++t) {
            for (std::size_t p = 0; p < n_classes; ++p) {
                h[p] += at(t, p);
            }
        }
        return h;
    }
    bool operator==(const ConfusionMatrix&) const = default;
};

/// Argmax class per row, using the policy's inference path. Policy run
/// statistics are left untouched.
inline std::vector<Label> predict(const MlpModel& model, ComputePolicy& policy, const Matrix& features,
                                  std::size_t chunk = 256) {
    const PolicyStats saved = policy.stats;
    Rng unused(0);
    std::vector<Label> out;
    out.reserve(features.rows());
    for (std::size_t start = 0; start < features.rows(); start += chunk) {
        const std::size_t n = std::min(chunk, features.rows() - start);
        Matrix x(n, features.cols());
        std::copy(features.data() + start * features.cols(), features.data() + (start + n) * features.cols(),
                  x.data());
        const PolicyTrace pt = forward_with_policy(model, x, policy, unused, PassMode::Eval);
        const Matrix& lp = pt.trace.log_probs();
        for (std::size_t r = 0; r < n; ++r) {
            out.push_back(static_cast<Label>(argmax(lp.row(r))));
        }
    }
    policy.stats = saved;
    return out;
}

inline ConfusionMatrix confusion(std::span<const Label> truth, std::span<const Label> predicted,
                                 std::size_t n_classes) {
    if (truth.size() != predicted.size()) {
        throw DimensionError("confusion: label counts differ");
    }
    ConfusionMatrix cm(n_classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= n_classes || predicted[i] >= n_classes) {
            throw ParameterError("confusion: label outside [0, n_classes)");
        }
        ++cm.at(truth[i], predicted[i]);
    }
    return cm;
}

inline ConfusionMatrix confusion(const MlpModel& model, ComputePolicy& policy, const Dataset& ds) {
    const auto pred = predict(model, policy, ds.features);
    return confusion(ds.labels, pred, std::max(ds.n_classes, model.n_outputs()));
}

struct LabelConcentration {
    std::size_t distinct = 0;
    std::vector<double> ratios; // share of predictions per label
};

inline LabelConcentration label_concentration(const ConfusionMatrix& cm) {
    LabelConcentration out;
    const auto hist = cm.predicted_histogram();
    const double total = static_cast<double>(cm.total());
    for (auto h : hist) {
        out.distinct += h > 0 ? 1 : 0;
        out.ratios.push_back(total > 0 ? static_cast<double>(h) / total : 0.0);
    }
    return out;
}

/// `true,pred,count`, every cell including zeros.
inline void write_confusion_csv(const ConfusionMatrix& cm, std::ostream& out) {
    out << "true,pred,count\n";
    for (std::size_t t = 0; t < cm.n_classes; ++t) {
        for (std::size_t p = 0; p < cm.n_classes; ++p) {
            out << t << ',' << p << ',' << cm.at(t, p) << '\n';
        }
    }
}

/// `label,count,ratio`
inline void write_labels_csv(const ConfusionMatrix& cm, std::ostream& out) {
    const auto hist = cm.predicted_histogram();
    const auto conc = label_concentration(cm);
    out << "label,count,ratio\n";
    out.precision(17);
    for (std::size_t l = 0; l < hist.size(); ++l) {
        out << l << ',' << hist[l] << ',' << conc.ratios[l] << '\n';
    }
}

/// `k,ratio`
inline void write_theorem_csv(const Theorem1Table& table, std::ostream& out) {
    out << "k,ratio\n";
    out.precision(17);
    for (const auto& r : table.rows) {
        out << r.k << ',' << r.ratio << '\n';
    }
}

} // namespace snn
