#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "subsample_nn/alsh.hpp"
#include "subsample_nn/errors.hpp"
#include "subsample_nn/linalg.hpp"
#include "subsample_nn/mc_matmul.hpp"
#include "subsample_nn/model.hpp"
#include "subsample_nn/rng.hpp"

namespace snn {

// Compute policies decide how each layer product z = a W + b is formed.
//
// Column-selection policies (Dropout, AdaptiveDropout, Alsh) compute z_j
// only for a subset of the nodes of every hidden layer; the rest have
// a_j = 0 and receive no gradient. McBackprop runs the exact forward pass
// and replaces each backprop product by a Bernoulli-sampled estimate.
// The output layer is always exact.

struct ExactPolicy {};

/// Uniform node sampling; kept activations are scaled by 1 / p_keep.
struct DropoutPolicy {
    double p_keep = 0.05;
};

/// Standout with shared weights: keep probability sigmoid(alpha z + beta),
/// clamped to [0.01, 1]. Inference uses the expected mask.
struct AdaptiveDropoutPolicy {
    double alpha = 1.0;
    double beta = 0.0;
};

struct AlshPolicy {
    AlshParams params;
    std::uint64_t seed = 0;
    std::vector<AlshIndex> indices; // one per hidden layer, filled by bind()
    std::uint64_t samples_checked = 0;
};

struct McBackpropPolicy {
    std::size_t k_samples = 10;
};

enum class PassMode { Train, Eval };

/// Run-level counters maintained by a policy.
struct PolicyStats {
    std::uint64_t overhead_flops = 0;
    double overhead_seconds = 0.0;
    std::uint64_t alsh_queries = 0;
    double alsh_active_fraction_sum = 0.0;
    std::uint64_t alsh_fallbacks = 0;
    std::uint64_t alsh_rebuilds = 0;

    double mean_active_fraction() const {
        return alsh_queries ? alsh_active_fraction_sum / static_cast<double>(alsh_queries) : 1.0;
    }
};

struct ComputePolicy {
    std::variant<ExactPolicy, DropoutPolicy, AdaptiveDropoutPolicy, AlshPolicy, McBackpropPolicy> kind;
    PolicyStats stats;

    static ComputePolicy exact() { return {ExactPolicy{}, {}}; }
    static ComputePolicy dropout(double p_keep) { return {DropoutPolicy{p_keep}, {}}; }
    static ComputePolicy adaptive_dropout(double alpha, double beta) {
        return {AdaptiveDropoutPolicy{alpha, beta}, {}};
    }
    static ComputePolicy alsh(const AlshParams& params, std::uint64_t seed) {
        AlshPolicy p;
        p.params = params;
        p.seed = seed;
        return {std::move(p), {}};
    }
    static ComputePolicy mc_backprop(std::size_t k_samples) { return {McBackpropPolicy{k_samples}, {}}; }

    std::string name() const {
        return std::visit(
            [](const auto& p) -> std::string {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, ExactPolicy>) {
                    return "exact";
                } else if constexpr (std::is_same_v<T, DropoutPolicy>) {
                    return "dropout";
                } else if constexpr (std::is_same_v<T, AdaptiveDropoutPolicy>) {
                    return "adaptive_dropout";
                } else if constexpr (std::is_same_v<T, AlshPolicy>) {
                    return "alsh";
                } else {
                    return "mc";
                }
            },
            kind);
    }

    template <typename T>
    T* get() {
        return std::get_if<T>(&kind);
    }
    template <typename T>
    const T* get() const {
        return std::get_if<T>(&kind);
    }
};

/// Forward trace plus the per-sample column scales that produced it.
/// column_scale[l] is empty when layer l was computed exactly; otherwise
/// it is batch x n_{l+1} and 0 marks a skipped node.
struct PolicyTrace {
    ForwardTrace trace;
    std::vector<Matrix> column_scale;
};

namespace detail {

/// Adds elapsed time and counted flops to the policy's overhead totals.
class OverheadScope {
public:
    explicit OverheadScope(PolicyStats& stats)
      : stats_(stats), flops_(flops::read()), start_(std::chrono::steady_clock::now())
    {
    }
    ~OverheadScope() {
        stats_.overhead_flops += flops::read() - flops_;
        stats_.overhead_seconds +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }
    OverheadScope(const OverheadScope&) = delete;
    OverheadScope& operator=(const OverheadScope&) = delete;

private:
    PolicyStats& stats_;
    std::uint64_t flops_;
    std::chrono::steady_clock::time_point start_;
};

inline double sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

/// z_j = a . W[:,j] + b_j and a_j = scale * f(z_j) for nodes with nonzero
/// scale; zeros elsewhere. Costs 2 n_in flops per computed node.
inline void masked_layer(const MlpModel& model, std::size_t l, const Matrix& in, const Matrix& scale,
                         ForwardTrace& trace) {
    const Matrix& w = model.weights[l];
    const Vector& bias = model.biases[l];
    const std::size_t n_in = w.rows();
    const std::size_t n_out = w.cols();
    Matrix z(in.rows(), n_out);
    Matrix a(in.rows(), n_out);
    std::uint64_t computed = 0;
    for (std::size_t r = 0; r < in.rows(); ++r) {
        const double* x = in.data() + r * n_in;
        for (std::size_t j = 0; j < n_out; ++j) {
            const double s = scale(r, j);
            if (s == 0.0) {
                continue;
            }
            double acc = 0.0;
            for (std::size_t i = 0; i < n_in; ++i) {
                acc += x[i] * w(i, j);
            }
            acc += bias[j];
            z(r, j) = acc;
            a(r, j) = s * activate(model.hidden_activation, acc);
            ++computed;
        }
    }
    flops::add(2ULL * computed * n_in);
    require_finite(z.span(), "masked_layer");
    trace.pre.push_back(std::move(z));
    trace.act.push_back(std::move(a));
}

} // namespace detail

/// Forward pass with caller-chosen column scales for the hidden layers
/// (empty matrix = exact layer). The output layer is always exact.
inline PolicyTrace forward_masked(const MlpModel& model, const Matrix& batch, std::vector<Matrix> column_scale) {
    if (batch.cols() != model.n_inputs()) {
        throw DimensionError("forward_masked: input width " + std::to_string(batch.cols()) +
                             ", model expects " + std::to_string(model.n_inputs()));
    }
    column_scale.resize(model.n_layers());
    PolicyTrace out;
    out.trace.act.push_back(batch);
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        const Matrix& s = column_scale[l];
        const bool hidden = l + 1 < model.n_layers();
        if (!hidden && s.size() != 0) {
            throw ParameterError("forward_masked: the output layer cannot be masked");
        }
        if (s.size() == 0) {
            finish_layer(model, l, matmul(out.trace.act.back(), model.weights[l]), out.trace);
        } else {
            if (s.rows() != batch.rows() || s.cols() != model.layer_dims[l + 1]) {
                throw DimensionError("forward_masked: column scale shape mismatch at layer " + std::to_string(l + 1));
            }
            detail::masked_layer(model, l, out.trace.act.back(), s, out.trace);
        }
    }
    out.column_scale = std::move(column_scale);
    return out;
}

namespace detail {

inline void check_bound(const MlpModel& model, const ComputePolicy& policy) {
    if (const auto* alsh = policy.get<AlshPolicy>()) {
        if (alsh->indices.size() + 1 != model.n_layers()) {
            throw ParameterError("ALSH policy is not bound to this model; call bind_policy first");
        }
    }
}

inline void record_active_set(PolicyStats& stats, std::size_t active, std::size_t width) {
    ++stats.alsh_queries;
    stats.alsh_active_fraction_sum += static_cast<double>(active) / static_cast<double>(width);
}

} // namespace detail

/// Validates the policy against the model and builds per-layer state.
inline void bind_policy(ComputePolicy& policy, const MlpModel& model) {
    model.validate();
    std::visit(
        [&](auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, DropoutPolicy>) {
                if (!(p.p_keep > 0.0 && p.p_keep <= 1.0)) {
                    throw ParameterError("dropout: p_keep must lie in (0, 1]");
                }
            } else if constexpr (std::is_same_v<T, AdaptiveDropoutPolicy>) {
                if (!std::isfinite(p.alpha) || !std::isfinite(p.beta)) {
                    throw ParameterError("adaptive dropout: alpha and beta must be finite");
                }
            } else if constexpr (std::is_same_v<T, AlshPolicy>) {
                p.params.validate();
                p.indices.clear();
                Rng root(p.seed, 0xa1);
                for (std::size_t l = 0; l + 1 < model.n_layers(); ++l) {
                    detail::OverheadScope scope(policy.stats);
                    p.indices.push_back(AlshIndex::build(model.weights[l], p.params, root.split(l).next_u64()));
                }
                p.samples_checked = 0;
            } else if constexpr (std::is_same_v<T, McBackpropPolicy>) {
                for (std::size_t l = 1; l + 1 < model.layer_dims.size(); ++l) {
                    if (p.k_samples < 1 || p.k_samples > model.layer_dims[l]) {
                        throw ParameterError("mc: k_samples=" + std::to_string(p.k_samples) +
                                             " outside [1, hidden width " + std::to_string(model.layer_dims[l]) + "]");
                    }
                }
                if (p.k_samples < 1) {
                    throw ParameterError("mc: k_samples must be >= 1");
                }
            }
        },
        policy.kind);
}

/// Rebuilds every ALSH table from the current weights when the cadence
/// fires for any sample count in (last check, samples_seen]. Returns
/// whether a rebuild happened. No-op for other policies.
inline bool rebuild_if_due(ComputePolicy& policy, const MlpModel& model, std::uint64_t samples_seen) {
    auto* alsh = policy.get<AlshPolicy>();
    if (alsh == nullptr) {
        return false;
    }
    bool due = false;
    for (std::uint64_t s = alsh->samples_checked + 1; s <= samples_seen; ++s) {
        if (rebuild_schedule(s)) {
            due = true;
            break;
        }
    }
    alsh->samples_checked = std::max(alsh->samples_checked, samples_seen);
    if (!due) {
        return false;
    }
    detail::OverheadScope scope(policy.stats);
    for (std::size_t l = 0; l < alsh->indices.size(); ++l) {
        alsh->indices[l] = AlshIndex::build(model.weights[l], alsh->params, alsh->indices[l].seed());
    }
    ++policy.stats.alsh_rebuilds;
    return true;
}

/// Per-node keep probabilities sigmoid(alpha z + beta), clamped to [0.01, 1].
inline Vector adaptive_keep_probs(std::span<const double> preactivation, double alpha, double beta) {
    Vector p(preactivation.size());
    for (std::size_t j = 0; j < preactivation.size(); ++j) {
        p[j] = std::clamp(detail::sigmoid(alpha * preactivation[j] + beta), 0.01, 1.0);
    }
    return p;
}

inline PolicyTrace forward_with_policy(const MlpModel& model, const Matrix& batch, ComputePolicy& policy, Rng& rng,
                                       PassMode mode = PassMode::Train) {
    detail::check_bound(model, policy);
    const std::size_t n_hidden = model.n_layers() - 1;
    const std::size_t rows = batch.rows();

    if (auto* p = policy.get<DropoutPolicy>(); p != nullptr && mode == PassMode::Train) {
        std::vector<Matrix> scales;
        const double inv = 1.0 / p->p_keep;
        for (std::size_t l = 0; l < n_hidden; ++l) {
            Matrix s(rows, model.layer_dims[l + 1]);
            {
                detail::OverheadScope scope(policy.stats);
                for (double& v : s.span()) {
                    v = rng.bernoulli(p->p_keep) ? inv : 0.0;
                }
            }
            scales.push_back(std::move(s));
        }
        return forward_masked(model, batch, std::move(scales));
    }

    if (auto* p = policy.get<AlshPolicy>()) {
        // Layer by layer: each query depends on the previous layer's sparse output.
        if (batch.cols() != model.n_inputs()) {
            throw DimensionError("forward_with_policy: input width mismatch");
        }
        PolicyTrace out;
        out.trace.act.push_back(batch);
        out.column_scale.resize(model.n_layers());
        for (std::size_t l = 0; l < model.n_layers(); ++l) {
            const Matrix& in = out.trace.act.back();
            if (l == n_hidden) {
                finish_layer(model, l, matmul(in, model.weights[l]), out.trace);
                break;
            }
            const std::size_t width = model.layer_dims[l + 1];
            Matrix s(rows, width);
            {
                detail::OverheadScope scope(policy.stats);
                for (std::size_t r = 0; r < rows; ++r) {
                    const ActiveSet active = p->indices[l].query(in.row(r), l);
                    if (active.nodes.empty()) {
                        ++policy.stats.alsh_fallbacks;
                        std::fill(s.row(r).begin(), s.row(r).end(), 1.0);
                        detail::record_active_set(policy.stats, width, width);
                    } else {
                        for (std::uint32_t j : active.nodes) {
                            s(r, j) = 1.0;
                        }
                        detail::record_active_set(policy.stats, active.nodes.size(), width);
                    }
                }
            }
            detail::masked_layer(model, l, in, s, out.trace);
            out.column_scale[l] = std::move(s);
        }
        return out;
    }

    if (auto* p = policy.get<AdaptiveDropoutPolicy>()) {
        // Keep probabilities need every pre-activation, so the full product is formed.
        if (batch.cols() != model.n_inputs()) {
            throw DimensionError("forward_with_policy: input width mismatch");
        }
        PolicyTrace out;
        out.trace.act.push_back(batch);
        out.column_scale.resize(model.n_layers());
        for (std::size_t l = 0; l < model.n_layers(); ++l) {
            finish_layer(model, l, matmul(out.trace.act.back(), model.weights[l]), out.trace);
            if (l == n_hidden) {
                break;
            }
            const Matrix& z = out.trace.pre.back();
            Matrix& a = out.trace.act.back();
            Matrix s(z.rows(), z.cols());
            {
                detail::OverheadScope scope(policy.stats);
                for (std::size_t r = 0; r < z.rows(); ++r) {
                    const Vector keep = adaptive_keep_probs(z.row(r), p->alpha, p->beta);
                    for (std::size_t j = 0; j < z.cols(); ++j) {
                        s(r, j) = mode == PassMode::Train ? (rng.bernoulli(keep[j]) ? 1.0 : 0.0) : keep[j];
                        a(r, j) *= s(r, j);
                    }
                }
            }
            if (mode == PassMode::Train) {
                out.column_scale[l] = std::move(s);
            }
        }
        return out;
    }

    // Exact, McBackprop, and Dropout at inference.
    PolicyTrace out;
    out.trace = forward(model, batch);
    out.column_scale.resize(model.n_layers());
    return out;
}

namespace detail {

/// dW += a^T delta, db, and a-gradient for a layer whose delta is zero
/// outside the active (row, node) pairs given by `scale`.
inline void masked_layer_backward(const Matrix& in, const Matrix& w, const Matrix& delta, const Matrix& scale,
                                  bool need_upstream, Matrix& dw, Vector& db, Matrix& up) {
    const std::size_t n_in = w.rows();
    const std::size_t n_out = w.cols();
    dw = Matrix(n_in, n_out);
    db = column_sums(delta);
    if (need_upstream) {
        up = Matrix(in.rows(), n_in);
    }
    std::vector<std::size_t> active;
    std::uint64_t pairs = 0;
    for (std::size_t r = 0; r < in.rows(); ++r) {
        active.clear();
        for (std::size_t j = 0; j < n_out; ++j) {
            if (scale(r, j) != 0.0) {
                active.push_back(j);
            }
        }
        pairs += active.size();
        const double* x = in.data() + r * n_in;
        for (std::size_t i = 0; i < n_in; ++i) {
            double* dwrow = dw.data() + i * n_out;
            const double xi = x[i];
            for (std::size_t j : active) {
                dwrow[j] += xi * delta(r, j);
            }
        }
        if (need_upstream) {
            for (std::size_t i = 0; i < n_in; ++i) {
                const double* wrow = w.data() + i * n_out;
                double acc = 0.0;
                for (std::size_t j : active) {
                    acc += delta(r, j) * wrow[j];
                }
                up(r, i) = acc;
            }
        }
    }
    flops::add(2ULL * pairs * n_in * (need_upstream ? 2 : 1));
}

/// up * f'(z) * scale, the delta of the layer below.
inline Matrix hidden_delta(const MlpModel& model, const PolicyTrace& pt, std::size_t layer, Matrix up) {
    apply_activation_derivative(model.hidden_activation, pt.trace.pre[layer], up);
    const Matrix& s = pt.column_scale[layer];
    if (s.size() != 0) {
        for (std::size_t i = 0; i < up.size(); ++i) {
            up.data()[i] *= s.data()[i];
        }
    }
    return up;
}

/// Optimal Bernoulli weights over the shared dimension of delta * W^T:
/// ||delta[:,j]|| * ||W[:,j]||.
inline Vector delta_product_probs(const Matrix& delta, const Matrix& w, std::size_t k) {
    Vector weights = col_norms(delta);
    const Vector wn = col_norms(w);
    for (std::size_t j = 0; j < weights.size(); ++j) {
        weights[j] *= wn[j];
    }
    flops::add(weights.size());
    return waterfill_probabilities(weights.span(), std::min(k, weights.size()));
}

/// MC backward pass. `draw(probs, k)` returns the Bernoulli plan for one
/// product; plans are requested per layer, top down, dW first.
template <typename DrawPlan>
Gradients mc_backward(const MlpModel& model, const PolicyTrace& pt, std::span<const Label> targets,
                      std::size_t k_samples, PolicyStats& stats, DrawPlan&& draw) {
    Gradients g;
    g.dW.resize(model.n_layers());
    g.db.resize(model.n_layers());
    Matrix delta = output_delta(pt.trace, targets);
    const std::size_t rows = delta.rows();
    for (std::size_t l = model.n_layers(); l-- > 0;) {
        const Matrix& in = pt.trace.act[l];
        const Matrix& w = model.weights[l];
        const std::size_t n_in = w.rows();
        const std::size_t n_out = w.cols();

        // dW = a^T delta: keep row i of dW with probability p_i from the
        // forward pair (a, W), scaled by 1/p_i.
        SamplePlan rows_plan;
        {
            OverheadScope scope(stats);
            const std::size_t k = std::min(k_samples, n_in);
            rows_plan = draw(optimal_probs_bernoulli(in, w, k), k);
        }
        Matrix dw(n_in, n_out);
        for (std::size_t e = 0; e < rows_plan.indices.size(); ++e) {
            const std::size_t i = rows_plan.indices[e];
            double* dwrow = dw.data() + i * n_out;
            for (std::size_t r = 0; r < rows; ++r) {
                const double s = in(r, i) * rows_plan.scales[e];
                const double* drow = delta.data() + r * n_out;
                for (std::size_t j = 0; j < n_out; ++j) {
                    dwrow[j] += s * drow[j];
                }
            }
        }
        flops::add(2ULL * rows_plan.indices.size() * rows * n_out);
        g.dW[l] = std::move(dw);
        g.db[l] = column_sums(delta);

        if (l == 0) {
            break;
        }
        // delta W^T: Bernoulli sampling over its shared dimension (nodes of layer l+1).
        SamplePlan shared_plan;
        {
            OverheadScope scope(stats);
            const std::size_t k = std::min(k_samples, n_out);
            shared_plan = draw(delta_product_probs(delta, w, k), k);
        }
        const std::size_t kept = shared_plan.indices.size();
        Matrix up(rows, n_in);
        std::vector<double> scaled(kept);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t e = 0; e < kept; ++e) {
                scaled[e] = delta(r, shared_plan.indices[e]) * shared_plan.scales[e];
            }
            for (std::size_t i = 0; i < n_in; ++i) {
                const double* wrow = w.data() + i * n_out;
                double acc = 0.0;
                for (std::size_t e = 0; e < kept; ++e) {
                    acc += scaled[e] * wrow[shared_plan.indices[e]];
                }
                up(r, i) = acc;
            }
        }
        flops::add(2ULL * rows * kept * n_in);
        delta = hidden_delta(model, pt, l - 1, std::move(up));
    }
    return g;
}

} // namespace detail

/// Backward pass for the product decisions recorded in `pt`; masked nodes
/// receive zero delta and zero weight-gradient columns.
inline Gradients backward_masked(const MlpModel& model, const PolicyTrace& pt, std::span<const Label> targets) {
    check_targets(model, pt.trace.act.front().rows(), targets);
    Gradients g;
    g.dW.resize(model.n_layers());
    g.db.resize(model.n_layers());
    Matrix delta = output_delta(pt.trace, targets);
    for (std::size_t l = model.n_layers(); l-- > 0;) {
        const Matrix& in = pt.trace.act[l];
        const Matrix& scale = pt.column_scale[l];
        Matrix up;
        if (scale.size() == 0) {
            g.dW[l] = matmul(transposed(in), delta);
            g.db[l] = column_sums(delta);
            if (l > 0) {
                up = matmul(delta, transposed(model.weights[l]));
            }
        } else {
            detail::masked_layer_backward(in, model.weights[l], delta, scale, l > 0, g.dW[l], g.db[l], up);
        }
        if (l > 0) {
            delta = detail::hidden_delta(model, pt, l - 1, std::move(up));
        }
    }
    return g;
}

inline Gradients backward_with_policy(const MlpModel& model, const PolicyTrace& pt, std::span<const Label> targets,
                                      ComputePolicy& policy, Rng& rng) {
    if (const auto* mc = policy.get<McBackpropPolicy>()) {
        check_targets(model, pt.trace.act.front().rows(), targets);
        return detail::mc_backward(model, pt, targets, mc->k_samples, policy.stats,
                                   [&rng](const Vector& p, std::size_t k) { return draw_bernoulli_plan(p, k, rng); });
    }
    return backward_masked(model, pt, targets);
}

} // namespace snn
