#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "subsample_nn/errors.hpp"
#include "subsample_nn/linalg.hpp"
#include "subsample_nn/rng.hpp"

namespace snn {

// Monte-Carlo approximation of AB over the shared dimension n.
//
// Column-row sampling (CR): draw c indices with replacement from p and sum
// the rank-one terms A[:,i] B[i,:] / (c p_i).
//
// Bernoulli sampling: keep index i independently with probability p_i
// (sum p_i = k) and sum A[:,i] B[i,:] / p_i over the kept indices.
//
// Both estimators are unbiased. Indices whose norm product is zero get
// p_i = 0 (their rank-one term is exactly zero), unless the budget exceeds
// the number of nonzero terms.

enum class SampleMode { WithReplacement, Bernoulli };

struct SamplePlan {
    SampleMode mode = SampleMode::Bernoulli;
    Vector probabilities;            // over the shared dimension
    std::size_t budget = 0;          // c for CR, k for Bernoulli
    std::vector<std::size_t> indices; // CR: the c draws in order; Bernoulli: kept indices ascending
    std::vector<double> scales;      // per entry of `indices`
};

namespace detail {

inline void check_shared(const Matrix& a, const Matrix& b, const char* op) {
    if (a.cols() != b.rows()) {
        throw DimensionError(std::string(op) + ": shared dimension mismatch (" + std::to_string(a.cols()) +
                             " vs " + std::to_string(b.rows()) + ")");
    }
}

/// w_i = ||A[:,i]|| * ||B[i,:]||
inline Vector norm_products(const Matrix& a, const Matrix& b) {
    Vector w = col_norms(a);
    const Vector bn = row_norms(b);
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] *= bn[i];
    }
    flops::add(w.size());
    return w;
}

} // namespace detail

/// Probabilities proportional to the norm products; they sum to 1.
inline Vector optimal_probs_cr(const Matrix& a, const Matrix& b) {
    detail::check_shared(a, b, "optimal_probs_cr");
    Vector p = detail::norm_products(a, b);
    double total = 0.0;
    for (double v : p) {
        total += v;
    }
    if (!(total > 0.0)) {
        throw DegenerateInputError("optimal_probs_cr: every column/row norm product is zero");
    }
    for (double& v : p) {
        v /= total;
    }
    flops::add(2 * p.size());
    return p;
}

/// Solves min sum (1-p_i)/p_i w_i^2 subject to sum p_i = k, 0 <= p_i <= 1.
///
/// The unconstrained optimum is p_i = k w_i / sum w. Entries above 1 are
/// fixed at 1 and the remaining budget is spread proportionally over the
/// rest, repeating until nothing exceeds 1.
inline Vector waterfill_probabilities(std::span<const double> weights, std::size_t k) {
    const std::size_t n = weights.size();
    if (k == 0 || k > n) {
        throw ParameterError("waterfill_probabilities: budget k=" + std::to_string(k) + " outside [1, " +
                             std::to_string(n) + "]");
    }
    std::size_t nonzero = 0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw ParameterError("waterfill_probabilities: weights must be finite and nonnegative");
        }
        nonzero += w > 0.0 ? 1 : 0;
    }

    Vector p(n);
    if (k >= nonzero) {
        // Every informative index is kept surely; leftover budget goes to the
        // zero-weight indices so that sum p = k still holds.
        const double leftover = static_cast<double>(k - nonzero);
        const double share = nonzero < n ? leftover / static_cast<double>(n - nonzero) : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = weights[i] > 0.0 ? 1.0 : share;
        }
        return p;
    }

    std::vector<bool> clipped(n, false);
    std::size_t n_clipped = 0;
    for (;;) {
        double free_weight = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!clipped[i]) {
                free_weight += weights[i];
            }
        }
        const double budget = static_cast<double>(k - n_clipped);
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (clipped[i]) {
                continue;
            }
            p[i] = budget * weights[i] / free_weight;
            if (p[i] >= 1.0) {
                p[i] = 1.0;
                clipped[i] = true;
                ++n_clipped;
                changed = true;
            }
        }
        flops::add(3 * n);
        if (!changed) {
            break;
        }
    }
    return p;
}

/// min{k w_i / sum w, 1} with the clipped mass redistributed so sum p = k.
inline Vector optimal_probs_bernoulli(const Matrix& a, const Matrix& b, std::size_t k) {
    detail::check_shared(a, b, "optimal_probs_bernoulli");
    if (k == 0 || k > a.cols()) {
        throw ParameterError("optimal_probs_bernoulli: k=" + std::to_string(k) + " outside [1, " +
                             std::to_string(a.cols()) + "]");
    }
    const Vector w = detail::norm_products(a, b);
    return waterfill_probabilities(w.span(), k);
}

/// c independent draws from `probs`; scale 1/(c p) per draw.
inline SamplePlan draw_cr_plan(const Vector& probs, std::size_t c_samples, Rng& rng) {
    if (c_samples == 0) {
        throw ParameterError("draw_cr_plan: c_samples must be >= 1");
    }
    SamplePlan plan;
    plan.mode = SampleMode::WithReplacement;
    plan.probabilities = probs;
    plan.budget = c_samples;
    plan.indices.reserve(c_samples);
    plan.scales.reserve(c_samples);
    const double c = static_cast<double>(c_samples);
    for (std::size_t t = 0; t < c_samples; ++t) {
        const std::size_t i = rng.choice_weighted(probs.span());
        plan.indices.push_back(i);
        plan.scales.push_back(1.0 / (c * probs[i]));
    }
    return plan;
}

/// Keeps index i with probability p_i; scale 1/p_i.
inline SamplePlan draw_bernoulli_plan(const Vector& probs, std::size_t k, Rng& rng) {
    SamplePlan plan;
    plan.mode = SampleMode::Bernoulli;
    plan.probabilities = probs;
    plan.budget = k;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (rng.bernoulli(probs[i])) {
            plan.indices.push_back(i);
            plan.scales.push_back(1.0 / probs[i]);
        }
    }
    return plan;
}

/// sum over plan entries of scale * A[:,i] B[i,:]. Counts 2 m |plan| p flops.
inline Matrix sampled_product(const Matrix& a, const Matrix& b, const SamplePlan& plan) {
    detail::check_shared(a, b, "sampled_product");
    const std::size_t m = a.rows();
    const std::size_t p = b.cols();
    Matrix out(m, p);
    for (std::size_t r = 0; r < m; ++r) {
        double* orow = out.data() + r * p;
        for (std::size_t e = 0; e < plan.indices.size(); ++e) {
            const std::size_t i = plan.indices[e];
            const double s = a(r, i) * plan.scales[e];
            const double* brow = b.data() + i * p;
            for (std::size_t j = 0; j < p; ++j) {
                orow[j] += s * brow[j];
            }
        }
    }
    flops::add(2ULL * m * plan.indices.size() * p);
    require_finite(out.span(), "sampled_product");
    return out;
}

struct ApproxProduct {
    Matrix product;
    SamplePlan plan;
};

inline ApproxProduct approx_matmul_cr(const Matrix& a, const Matrix& b, std::size_t c_samples, Rng& rng) {
    if (c_samples == 0) {
        throw ParameterError("approx_matmul_cr: c_samples must be >= 1");
    }
    const Vector p = optimal_probs_cr(a, b);
    SamplePlan plan = draw_cr_plan(p, c_samples, rng);
    Matrix product = sampled_product(a, b, plan);
    return {std::move(product), std::move(plan)};
}

inline Matrix approx_matmul_cr(const Matrix& a, const Matrix& b, std::size_t c_samples, std::uint64_t seed) {
    Rng rng(seed, 0xc7);
    return approx_matmul_cr(a, b, c_samples, rng).product;
}

inline ApproxProduct approx_matmul_bernoulli(const Matrix& a, const Matrix& b, std::size_t k, Rng& rng) {
    const Vector p = optimal_probs_bernoulli(a, b, k);
    SamplePlan plan = draw_bernoulli_plan(p, k, rng);
    Matrix product = sampled_product(a, b, plan);
    return {std::move(product), std::move(plan)};
}

inline ApproxProduct approx_matmul_bernoulli(const Matrix& a, const Matrix& b, std::size_t k, std::uint64_t seed) {
    Rng rng(seed, 0xbe);
    return approx_matmul_bernoulli(a, b, k, rng);
}

/// E||AB - A'B'||_F^2 = sum (1-p_i)/p_i ||A[:,i]||^2 ||B[i,:]||^2 for the
/// Bernoulli estimator. Terms with zero weight contribute nothing.
inline double bernoulli_expected_error(const Matrix& a, const Matrix& b, const Vector& probs) {
    detail::check_shared(a, b, "bernoulli_expected_error");
    const Vector w = detail::norm_products(a, b);
    double err = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] == 0.0) {
            continue;
        }
        if (!(probs[i] > 0.0)) {
            return INFINITY;
        }
        err += (1.0 - probs[i]) / probs[i] * w[i] * w[i];
    }
    return err;
}

/// E||AB - CR||_F^2 = (sum ||A[:,i]||^2 ||B[i,:]||^2 / p_i - ||AB||_F^2) / c.
inline double cr_expected_error(const Matrix& a, const Matrix& b, const Vector& probs, std::size_t c_samples) {
    detail::check_shared(a, b, "cr_expected_error");
    const Vector w = detail::norm_products(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] == 0.0) {
            continue;
        }
        if (!(probs[i] > 0.0)) {
            return INFINITY;
        }
        s += w[i] * w[i] / probs[i];
    }
    const double exact = frobenius_norm(matmul(a, b));
    return (s - exact * exact) / static_cast<double>(c_samples);
}

} // namespace snn
