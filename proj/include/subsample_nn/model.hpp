#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "subsample_nn/data.hpp"
#include "subsample_nn/errors.hpp"
#include "subsample_nn/linalg.hpp"
#include "subsample_nn/rng.hpp"

namespace snn {

enum class Activation { ReLU, Linear };

inline const char* to_string(Activation a) {
    return a == Activation::ReLU ? "relu" : "linear";
}

/// Multilayer perceptron z^k = a^{k-1} W^k + b^k with a log-softmax output.
///
/// weights[l] holds W^{l+1} (layer_dims[l] x layer_dims[l+1]); every layer
/// but the last applies `hidden_activation`.
struct MlpModel {
    std::vector<std::size_t> layer_dims;
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    Activation hidden_activation = Activation::ReLU;

    std::size_t n_layers() const { return weights.size(); }
    std::size_t n_inputs() const { return layer_dims.front(); }
    std::size_t n_outputs() const { return layer_dims.back(); }

    void validate() const {
        if (layer_dims.size() < 2 || weights.size() != layer_dims.size() - 1 || biases.size() != weights.size()) {
            throw DimensionError("MlpModel: layer count mismatch");
        }
        for (std::size_t l = 0; l < weights.size(); ++l) {
            if (weights[l].rows() != layer_dims[l] || weights[l].cols() != layer_dims[l + 1] ||
                biases[l].size() != layer_dims[l + 1]) {
                throw DimensionError("MlpModel: layer " + std::to_string(l + 1) + " shape mismatch");
            }
        }
    }

    bool operator==(const MlpModel&) const = default;
};

/// Pre-activations and activations of one batch (rows are samples).
/// act[0] is the input and act.back() the log-softmax output.
struct ForwardTrace {
    std::vector<Matrix> pre;
    std::vector<Matrix> act;

    const Matrix& log_probs() const { return act.back(); }
};

struct Gradients {
    std::vector<Matrix> dW;
    std::vector<Vector> db;

    static Gradients zeros_like(const MlpModel& model) {
        Gradients g;
        for (std::size_t l = 0; l < model.n_layers(); ++l) {
            g.dW.emplace_back(model.weights[l].rows(), model.weights[l].cols());
            g.db.emplace_back(model.biases[l].size());
        }
        return g;
    }
};

inline double activate(Activation f, double z) {
    return f == Activation::ReLU ? (z > 0.0 ? z : 0.0) : z;
}

inline double activate_derivative(Activation f, double z) {
    return f == Activation::ReLU ? (z > 0.0 ? 1.0 : 0.0) : 1.0;
}

inline void log_softmax_rows(const Matrix& z, Matrix& out) {
    out = Matrix(z.rows(), z.cols());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        auto row = z.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double v : row) {
            sum += std::exp(v - mx);
        }
        const double lse = mx + std::log(sum);
        auto dst = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            dst[c] = row[c] - lse;
        }
    }
}

/// Adds the bias row and applies the layer's activation, filling trace.pre
/// and trace.act for layer `l`.
inline void finish_layer(const MlpModel& model, std::size_t l, Matrix z, ForwardTrace& trace) {
    const Vector& b = model.biases[l];
    for (std::size_t r = 0; r < z.rows(); ++r) {
        auto row = z.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            row[c] += b[c];
        }
    }
    Matrix a;
    if (l + 1 == model.n_layers()) {
        log_softmax_rows(z, a);
    } else {
        a = Matrix(z.rows(), z.cols());
        for (std::size_t i = 0; i < z.size(); ++i) {
            a.data()[i] = activate(model.hidden_activation, z.data()[i]);
        }
    }
    trace.pre.push_back(std::move(z));
    trace.act.push_back(std::move(a));
}

inline ForwardTrace forward(const MlpModel& model, const Matrix& batch) {
    if (batch.cols() != model.n_inputs()) {
        throw DimensionError("forward: input width " + std::to_string(batch.cols()) + ", model expects " +
                             std::to_string(model.n_inputs()));
    }
    ForwardTrace trace;
    trace.act.push_back(batch);
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        finish_layer(model, l, matmul(trace.act.back(), model.weights[l]), trace);
    }
    return trace;
}

inline ForwardTrace forward(const MlpModel& model, const Vector& input) {
    return forward(model, Matrix::from_row(input));
}

inline void check_targets(const MlpModel& model, std::size_t batch_rows, std::span<const Label> targets) {
    if (targets.size() != batch_rows) {
        throw DimensionError("backward: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(batch_rows) + " samples");
    }
    for (Label t : targets) {
        if (t >= model.n_outputs()) {
            throw ParameterError("backward: target class " + std::to_string(t) + " >= " +
                                 std::to_string(model.n_outputs()) + " outputs");
        }
    }
}

/// d(mean NLL)/dz at the output: (softmax(z) - onehot(target)) / batch.
inline Matrix output_delta(const ForwardTrace& trace, std::span<const Label> targets) {
    const Matrix& lp = trace.log_probs();
    Matrix delta(lp.rows(), lp.cols());
    const double inv_batch = 1.0 / static_cast<double>(lp.rows());
    for (std::size_t r = 0; r < lp.rows(); ++r) {
        for (std::size_t c = 0; c < lp.cols(); ++c) {
            delta(r, c) = (std::exp(lp(r, c)) - (c == targets[r] ? 1.0 : 0.0)) * inv_batch;
        }
    }
    return delta;
}

inline Vector column_sums(const Matrix& m) {
    Vector s(m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) {
            s[c] += row[c];
        }
    }
    return s;
}

/// Multiplies `upstream` (dL/da) by f'(z) in place, turning it into dL/dz.
inline void apply_activation_derivative(Activation f, const Matrix& z, Matrix& upstream) {
    for (std::size_t i = 0; i < z.size(); ++i) {
        upstream.data()[i] *= activate_derivative(f, z.data()[i]);
    }
}

/// Gradients of the batch-mean negative log-likelihood.
/// dW^k = (a^{k-1})^T delta^k, db^k = sum over rows of delta^k.
inline Gradients backward(const MlpModel& model, const ForwardTrace& trace, std::span<const Label> targets) {
    check_targets(model, trace.act.front().rows(), targets);
    Gradients g;
    g.dW.resize(model.n_layers());
    g.db.resize(model.n_layers());
    Matrix delta = output_delta(trace, targets);
    for (std::size_t l = model.n_layers(); l-- > 0;) {
        g.dW[l] = matmul(transposed(trace.act[l]), delta);
        g.db[l] = column_sums(delta);
        if (l > 0) {
            Matrix up = matmul(delta, transposed(model.weights[l]));
            apply_activation_derivative(model.hidden_activation, trace.pre[l - 1], up);
            delta = std::move(up);
        }
    }
    return g;
}

inline Gradients backward(const MlpModel& model, const ForwardTrace& trace, Label target) {
    return backward(model, trace, std::span<const Label>(&target, 1));
}

/// Mean negative log-likelihood of `targets` under the model.
inline double nll_loss(const ForwardTrace& trace, std::span<const Label> targets) {
    const Matrix& lp = trace.log_probs();
    double s = 0.0;
    for (std::size_t r = 0; r < lp.rows(); ++r) {
        s -= lp(r, targets[r]);
    }
    return s / static_cast<double>(lp.rows());
}

inline std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

enum class InitScheme { HeUniform, Zeros };

/// He-uniform weights (bound sqrt(6 / fan_in)) and zero biases.
inline MlpModel init_weights(const std::vector<std::size_t>& layer_dims, InitScheme scheme, std::uint64_t seed,
                             Activation hidden = Activation::ReLU) {
    if (layer_dims.size() < 2) {
        throw ParameterError("init_weights: need at least an input and an output layer");
    }
    for (std::size_t d : layer_dims) {
        if (d == 0) {
            throw ParameterError("init_weights: layer widths must be positive");
        }
    }
    MlpModel model;
    model.layer_dims = layer_dims;
    model.hidden_activation = hidden;
    Rng root(seed, 0x1417);
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        Matrix w(layer_dims[l], layer_dims[l + 1]);
        if (scheme == InitScheme::HeUniform) {
            Rng rng = root.split(l);
            const double bound = std::sqrt(6.0 / static_cast<double>(layer_dims[l]));
            for (double& v : w.span()) {
                v = (2.0 * rng.uniform() - 1.0) * bound;
            }
        }
        model.weights.push_back(std::move(w));
        model.biases.emplace_back(layer_dims[l + 1]);
    }
    return model;
}

enum class OptimizerKind { Sgd, Adam };

struct Optimizer {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step_count = 0;
    // Adam moments; allocated on the first step
    Gradients first_moment;
    Gradients second_moment;
};

namespace detail {

inline void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                        std::span<double> v, const Optimizer& opt, double bias1, double bias2) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
        v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
        const double m_hat = m[i] / bias1;
        const double v_hat = v[i] / bias2;
        param[i] -= opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.epsilon);
    }
}

inline void check_shapes(const MlpModel& model, const Gradients& grads) {
    if (grads.dW.size() != model.n_layers() || grads.db.size() != model.n_layers()) {
        throw DimensionError("step: gradient layer count mismatch");
    }
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        if (grads.dW[l].rows() != model.weights[l].rows() || grads.dW[l].cols() != model.weights[l].cols() ||
            grads.db[l].size() != model.biases[l].size()) {
            throw DimensionError("step: gradient shape mismatch at layer " + std::to_string(l + 1));
        }
    }
}

} // namespace detail

/// SGD: W <- W - lr * dW. Adam: bias-corrected moment update.
inline void step(Optimizer& opt, MlpModel& model, const Gradients& grads) {
    detail::check_shapes(model, grads);
    if (opt.kind == OptimizerKind::Sgd) {
        for (std::size_t l = 0; l < model.n_layers(); ++l) {
            auto w = model.weights[l].span();
            auto dw = grads.dW[l].span();
            for (std::size_t i = 0; i < w.size(); ++i) {
                w[i] -= opt.learning_rate * dw[i];
            }
            auto b = model.biases[l].span();
            auto db = grads.db[l].span();
            for (std::size_t i = 0; i < b.size(); ++i) {
                b[i] -= opt.learning_rate * db[i];
            }
        }
        ++opt.step_count;
        return;
    }

    if (opt.first_moment.dW.empty()) {
        opt.first_moment = Gradients::zeros_like(model);
        opt.second_moment = Gradients::zeros_like(model);
    }
    ++opt.step_count;
    const double t = static_cast<double>(opt.step_count);
    const double bias1 = 1.0 - std::pow(opt.beta1, t);
    const double bias2 = 1.0 - std::pow(opt.beta2, t);
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        detail::adam_update(model.weights[l].span(), grads.dW[l].span(), opt.first_moment.dW[l].span(),
                            opt.second_moment.dW[l].span(), opt, bias1, bias2);
        detail::adam_update(model.biases[l].span(), grads.db[l].span(), opt.first_moment.db[l].span(),
                            opt.second_moment.db[l].span(), opt, bias1, bias2);
    }
}

} // namespace snn
