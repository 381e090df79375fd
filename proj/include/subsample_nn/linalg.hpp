#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "subsample_nn/errors.hpp"

namespace snn {

namespace flops {

/// Process-wide tally of scalar floating point operations spent in products
/// and norm passes. A multiply-add counts as two.
inline std::atomic<std::uint64_t>& counter() {
    static std::atomic<std::uint64_t> value{0};
    return value;
}

inline void add(std::uint64_t n) {
    counter().fetch_add(n, std::memory_order_relaxed);
}

inline std::uint64_t read() {
    return counter().load(std::memory_order_relaxed);
}

} // namespace flops

class Vector {
public:
    Vector() = default;
    explicit Vector(std::size_t len, double fill = 0.0) : data_(len, fill) {}
    explicit Vector(std::vector<double> values) : data_(std::move(values)) {}
    Vector(std::initializer_list<double> values) : data_(values) {}

    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> span() { return data_; }
    std::span<const double> span() const { return data_; }

    auto begin() { return data_.begin(); }
    auto end() { return data_.end(); }
    auto begin() const { return data_.begin(); }
    auto end() const { return data_.end(); }

    const std::vector<double>& values() const { return data_; }

    bool operator==(const Vector&) const = default;

private:
    std::vector<double> data_;
};

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill)
    {
    }

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), data_(std::move(values))
    {
        if (data_.size() != rows_ * cols_) {
            throw DimensionError("Matrix: " + std::to_string(data_.size()) + " values for a " +
                                 std::to_string(rows_) + "x" + std::to_string(cols_) + " shape");
        }
    }

    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ ? rows.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) {
                throw DimensionError("Matrix: ragged initializer");
            }
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m(i, i) = 1.0;
        }
        return m;
    }

    static Matrix from_row(const Vector& v) {
        return Matrix(1, v.size(), v.values());
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    Vector row_vector(std::size_t r) const {
        auto s = row(r);
        return Vector(std::vector<double>(s.begin(), s.end()));
    }

    Vector col_vector(std::size_t c) const {
        Vector v(rows_);
        for (std::size_t r = 0; r < rows_; ++r) {
            v[r] = (*this)(r, c);
        }
        return v;
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> span() { return data_; }
    std::span<const double> span() const { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

template <typename M>
concept MatrixLike = requires(const M& m, std::size_t i) {
    { m.rows() } -> std::convertible_to<std::size_t>;
    { m.cols() } -> std::convertible_to<std::size_t>;
    { m(i, i) } -> std::convertible_to<double>;
};

/// Read-only transposed view; no copy of the underlying storage.
class Transposed {
public:
    explicit Transposed(const Matrix& base) : base_(&base) {}

    std::size_t rows() const { return base_->cols(); }
    std::size_t cols() const { return base_->rows(); }
    double operator()(std::size_t r, std::size_t c) const { return (*base_)(c, r); }
    const Matrix& base() const { return *base_; }

private:
    const Matrix* base_;
};

inline Transposed transposed(const Matrix& m) {
    return Transposed(m);
}

inline bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

inline void require_finite(std::span<const double> values, const char* op) {
    if (!all_finite(values)) {
        throw NumericError(std::string(op) + ": non-finite result");
    }
}

/// Exact product. Every output entry is accumulated in ascending order of
/// the shared index, which the masked kernels in policies.hpp reproduce.
template <MatrixLike L, MatrixLike R>
Matrix matmul(const L& a, const R& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                             " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    const std::size_t p = b.cols();
    Matrix out(m, p);

    if constexpr (std::is_same_v<R, Transposed> && std::is_same_v<L, Matrix>) {
        // a * base^T: both operands walk contiguous rows
        const Matrix& bb = b.base();
        for (std::size_t i = 0; i < m; ++i) {
            const double* ar = a.data() + i * n;
            for (std::size_t j = 0; j < p; ++j) {
                const double* br = bb.data() + j * n;
                double s = 0.0;
                for (std::size_t t = 0; t < n; ++t) {
                    s += ar[t] * br[t];
                }
                out(i, j) = s;
            }
        }
    } else if constexpr (std::is_same_v<R, Matrix>) {
        for (std::size_t i = 0; i < m; ++i) {
            double* orow = out.data() + i * p;
            for (std::size_t t = 0; t < n; ++t) {
                const double s = a(i, t);
                const double* brow = b.data() + t * p;
                for (std::size_t j = 0; j < p; ++j) {
                    orow[j] += s * brow[j];
                }
            }
        }
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < p; ++j) {
                double s = 0.0;
                for (std::size_t t = 0; t < n; ++t) {
                    s += a(i, t) * b(t, j);
                }
                out(i, j) = s;
            }
        }
    }

    flops::add(2ULL * m * n * p);
    require_finite(out.span(), "matmul");
    return out;
}

inline Vector vecmat(const Vector& v, const Matrix& m) {
    if (v.size() != m.rows()) {
        throw DimensionError("vecmat: vector of length " + std::to_string(v.size()) + " times " +
                             std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
    Matrix out = matmul(Matrix::from_row(v), m);
    return out.row_vector(0);
}

inline Vector col_norms(const Matrix& m) {
    Vector sq(m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) {
            sq[c] += row[c] * row[c];
        }
    }
    for (double& v : sq) {
        v = std::sqrt(v);
    }
    flops::add(2ULL * m.rows() * m.cols());
    return sq;
}

inline Vector row_norms(const Matrix& m) {
    Vector out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double s = 0.0;
        for (double v : m.row(r)) {
            s += v * v;
        }
        out[r] = std::sqrt(s);
    }
    flops::add(2ULL * m.rows() * m.cols());
    return out;
}

inline double dot(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw DimensionError("dot: length mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        s += x[i] * y[i];
    }
    return s;
}

inline double norm2(std::span<const double> x) {
    return std::sqrt(dot(x, x));
}

inline double frobenius_norm(const Matrix& m) {
    return norm2(m.span());
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("matrix subtraction: shape mismatch");
    }
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.data()[i] = a.data()[i] - b.data()[i];
    }
    return out;
}

/// Materialized transpose.
inline Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out(c, r) = m(r, c);
        }
    }
    return out;
}

} // namespace snn
