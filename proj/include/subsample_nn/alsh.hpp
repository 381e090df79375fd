#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "subsample_nn/errors.hpp"
#include "subsample_nn/linalg.hpp"
#include "subsample_nn/rng.hpp"

namespace snn {

// Asymmetric LSH for maximum inner-product search.
//
// Data vectors are scaled so the largest has norm C < 1 and padded with
// ||w||^2, ||w||^4, ..., ||w||^(2^m). Queries are unit-normalized and padded
// with m halves. Then
//
//   ||Q(a) - P(w)||^2 = 1 + m/4 - 2<a, w> + ||w||^(2^(m+1)),
//
// and the last term vanishes as m grows, so nearest neighbours of Q(a)
// among the P(w) are the maximum inner-product vectors. Buckets come from
// K random sign projections per table, L tables.

struct AlshParams {
    std::size_t bits_per_table = 6; // K
    std::size_t tables = 5;         // L
    std::size_t padding = 3;        // m
    double norm_bound = 0.83;       // C

    void validate() const {
        if (bits_per_table < 1 || bits_per_table > 24) {
            throw ParameterError("AlshParams: K must lie in [1, 24]");
        }
        if (tables < 1) {
            throw ParameterError("AlshParams: L must be >= 1");
        }
        if (padding < 1) {
            throw ParameterError("AlshParams: m must be >= 1");
        }
        if (!(norm_bound > 0.0 && norm_bound < 1.0)) {
            throw ParameterError("AlshParams: C must lie in (0, 1)");
        }
    }
};

/// Nodes whose weight column collided with the query in at least one table.
struct ActiveSet {
    std::size_t layer = 0;
    std::vector<std::uint32_t> nodes; // ascending, unique
};

/// [w'; ||w'||^2, ||w'||^4, ..., ||w'||^(2^m)] with w' = w / scale.
inline Vector transform_p(std::span<const double> w, std::size_t m, double scale) {
    if (!(scale > 0.0)) {
        throw ParameterError("transform_p: scale must be positive");
    }
    Vector out(w.size() + m);
    double sq = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        out[i] = w[i] / scale;
        sq += out[i] * out[i];
    }
    if (sq > 1.0) {
        throw NormBoundError("transform_p: scaled norm " + std::to_string(std::sqrt(sq)) + " exceeds 1");
    }
    double power = sq; // ||w'||^(2^1)
    for (std::size_t i = 0; i < m; ++i) {
        out[w.size() + i] = power;
        power *= power;
    }
    return out;
}

/// [a / ||a||; 1/2, ..., 1/2]. A zero query is padded without normalizing.
inline Vector transform_q(std::span<const double> a, std::size_t m) {
    Vector out(a.size() + m, 0.5);
    const double nrm = norm2(a);
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = nrm > 0.0 ? a[i] / nrm : 0.0;
    }
    return out;
}

/// 1 - (1 - p^K)^L: chance of sharing a bucket in at least one of L tables
/// when each of the K sign bits agrees with probability p.
inline double collision_probability(double p, std::size_t bits_per_table, std::size_t tables) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ParameterError("collision_probability: p must lie in [0, 1]");
    }
    const double per_table = std::pow(p, static_cast<double>(bits_per_table));
    return 1.0 - std::pow(1.0 - per_table, static_cast<double>(tables));
}

/// Per-bit agreement probability of a random hyperplane for two vectors at
/// angle theta: 1 - theta / pi.
inline double sign_bit_agreement(std::span<const double> x, std::span<const double> y) {
    const double nx = norm2(x);
    const double ny = norm2(y);
    if (nx == 0.0 || ny == 0.0) {
        return 0.5;
    }
    const double cosine = std::clamp(dot(x, y) / (nx * ny), -1.0, 1.0);
    return 1.0 - std::acos(cosine) / std::numbers::pi;
}

/// Table rebuild cadence: every 100 samples up to 10000, then every 1000.
/// The index is built before the first sample, so 0 does not trigger.
inline bool rebuild_schedule(std::uint64_t samples_seen) {
    if (samples_seen == 0) {
        return false;
    }
    return samples_seen <= 10000 ? samples_seen % 100 == 0 : samples_seen % 1000 == 0;
}

class AlshIndex {
public:
    AlshIndex() = default;

    /// Indexes the columns of `columns` (one vector per column).
    static AlshIndex build(const Matrix& columns, const AlshParams& params, std::uint64_t seed) {
        params.validate();
        if (columns.cols() == 0 || columns.rows() == 0) {
            throw ParameterError("AlshIndex::build: no columns to index");
        }
        AlshIndex index;
        index.params_ = params;
        index.seed_ = seed;
        index.dim_ = columns.rows();
        index.n_columns_ = columns.cols();

        const Vector norms = col_norms(columns);
        const double max_norm = *std::max_element(norms.begin(), norms.end());
        index.scale_ = max_norm > 0.0 ? max_norm / params.norm_bound : 1.0;

        const std::size_t width = index.dim_ + params.padding;
        Rng root(seed, 0xa15);
        for (std::size_t t = 0; t < params.tables; ++t) {
            Rng rng = root.split(t);
            Matrix planes(params.bits_per_table, width);
            for (double& v : planes.span()) {
                v = rng.gauss();
            }
            index.projections_.push_back(std::move(planes));
        }

        const std::size_t n_buckets = std::size_t{1} << params.bits_per_table;
        index.tables_.assign(params.tables, std::vector<std::vector<std::uint32_t>>(n_buckets));
        std::vector<double> column(index.dim_);
        for (std::size_t j = 0; j < index.n_columns_; ++j) {
            for (std::size_t i = 0; i < index.dim_; ++i) {
                column[i] = columns(i, j);
            }
            const Vector transformed = transform_p(column, params.padding, index.scale_);
            for (std::size_t t = 0; t < params.tables; ++t) {
                index.tables_[t][index.signature(t, transformed.span())].push_back(static_cast<std::uint32_t>(j));
            }
        }
        return index;
    }

    static AlshIndex build(const std::vector<Vector>& columns, const AlshParams& params, std::uint64_t seed) {
        if (columns.empty()) {
            throw ParameterError("AlshIndex::build: no columns to index");
        }
        Matrix m(columns.front().size(), columns.size());
        for (std::size_t j = 0; j < columns.size(); ++j) {
            if (columns[j].size() != m.rows()) {
                throw DimensionError("AlshIndex::build: columns differ in length");
            }
            for (std::size_t i = 0; i < m.rows(); ++i) {
                m(i, j) = columns[j][i];
            }
        }
        return build(m, params, seed);
    }

    /// K-bit sign pattern of `transformed` (length dim + m) under table t.
    std::uint32_t signature(std::size_t table, std::span<const double> transformed) const {
        const Matrix& planes = projections_[table];
        std::uint32_t code = 0;
        for (std::size_t b = 0; b < planes.rows(); ++b) {
            if (dot(planes.row(b), transformed) >= 0.0) {
                code |= std::uint32_t{1} << b;
            }
        }
        flops::add(2ULL * planes.rows() * planes.cols());
        return code;
    }

    /// Union of the buckets Q(a) falls into across all tables.
    ActiveSet query(std::span<const double> a, std::size_t layer = 0) const {
        if (a.size() != dim_) {
            throw DimensionError("AlshIndex::query: query length " + std::to_string(a.size()) + ", index holds " +
                                 std::to_string(dim_));
        }
        const Vector q = transform_q(a, params_.padding);
        std::vector<bool> seen(n_columns_, false);
        ActiveSet out;
        out.layer = layer;
        for (std::size_t t = 0; t < tables_.size(); ++t) {
            for (std::uint32_t j : tables_[t][signature(t, q.span())]) {
                if (!seen[j]) {
                    seen[j] = true;
                    out.nodes.push_back(j);
                }
            }
        }
        std::sort(out.nodes.begin(), out.nodes.end());
        return out;
    }

    /// Bucket holding column j in table t.
    std::uint32_t bucket_of(std::size_t table, std::size_t column) const {
        const auto& buckets = tables_.at(table);
        for (std::size_t b = 0; b < buckets.size(); ++b) {
            if (std::find(buckets[b].begin(), buckets[b].end(), column) != buckets[b].end()) {
                return static_cast<std::uint32_t>(b);
            }
        }
        throw ParameterError("AlshIndex::bucket_of: column " + std::to_string(column) + " is not indexed");
    }

    std::vector<std::size_t> occupancy(std::size_t table) const {
        std::vector<std::size_t> counts;
        for (const auto& bucket : tables_.at(table)) {
            counts.push_back(bucket.size());
        }
        return counts;
    }

    const std::vector<std::vector<std::uint32_t>>& buckets(std::size_t table) const { return tables_.at(table); }
    const Matrix& projections(std::size_t table) const { return projections_.at(table); }
    const AlshParams& params() const { return params_; }
    std::uint64_t seed() const { return seed_; }
    std::size_t dim() const { return dim_; }
    std::size_t n_columns() const { return n_columns_; }
    double scale() const { return scale_; }

private:
    AlshParams params_;
    std::uint64_t seed_ = 0;
    std::size_t dim_ = 0;
    std::size_t n_columns_ = 0;
    double scale_ = 1.0;
    std::vector<Matrix> projections_;                               // L of K x (dim + m)
    std::vector<std::vector<std::vector<std::uint32_t>>> tables_;   // L x 2^K buckets
};

/// Bucket-occupancy histograms per table:
/// {"layer": l, "columns": n, "tables": [[count per bucket], ...]}
inline nlohmann::json occupancy_json(const AlshIndex& index, std::size_t layer) {
    nlohmann::json tables = nlohmann::json::array();
    for (std::size_t t = 0; t < index.params().tables; ++t) {
        tables.push_back(index.occupancy(t));
    }
    return {{"layer", layer},
            {"columns", index.n_columns()},
            {"bits_per_table", index.params().bits_per_table},
            {"tables", tables}};
}

} // namespace snn
