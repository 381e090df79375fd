#include <cmath>
#include <limits>

#include "catch_amalgamated.hpp"

#include "subsample_nn/linalg.hpp"
#include "subsample_nn/rng.hpp"

using namespace snn;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (double& v : m.span()) {
        v = rng.gauss();
    }
    return m;
}

Matrix naive_product(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            long double s = 0.0L;
            for (std::size_t t = 0; t < a.cols(); ++t) {
                s += static_cast<long double>(a(i, t)) * b(t, j);
            }
            out(i, j) = static_cast<double>(s);
        }
    }
    return out;
}

} // namespace

TEST_CASE("matmul: identity and hand-computed products") {
    const Matrix m{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
    CHECK(matmul(Matrix::identity(3), m) == m);
    const Matrix a{{1, 2}, {3, 4}};
    const Matrix b{{5, 6}, {7, 8}};
    CHECK(matmul(a, b) == Matrix{{19, 22}, {43, 50}});
}

TEST_CASE("matmul: random 7x5 by 5x3 matches a triple loop") {
    Rng rng(11);
    const Matrix a = random_matrix(7, 5, rng);
    const Matrix b = random_matrix(5, 3, rng);
    const Matrix got = matmul(a, b);
    const Matrix want = naive_product(a, b);
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(std::abs(got.data()[i] - want.data()[i]) <= 1e-12);
    }
}

TEST_CASE("matmul: transposed operands agree with materialized transposes") {
    Rng rng(12);
    const Matrix a = random_matrix(4, 6, rng);
    const Matrix b = random_matrix(5, 6, rng);
    const Matrix c = random_matrix(4, 3, rng);
    CHECK(matmul(a, transposed(b)) == matmul(a, transpose(b)));
    const Matrix lhs = matmul(transposed(a), c);
    const Matrix rhs = matmul(transpose(a), c);
    for (std::size_t i = 0; i < lhs.size(); ++i) {
        CHECK(lhs.data()[i] == Catch::Approx(rhs.data()[i]).margin(1e-14));
    }
}

TEST_CASE("matmul: dimension mismatch and non-finite results raise") {
    CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionError);
    Matrix big(1, 1, std::numeric_limits<double>::max());
    CHECK_THROWS_AS(matmul(big, Matrix(1, 1, 10.0)), NumericError);
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1.0}), DimensionError);
}

TEST_CASE("matmul: associativity on random triples") {
    Rng rng(13);
    for (int t = 0; t < 50; ++t) {
        const Matrix a = random_matrix(1 + rng.uniform_index(6), 1 + rng.uniform_index(6), rng);
        const Matrix b = random_matrix(a.cols(), 1 + rng.uniform_index(6), rng);
        const Matrix c = random_matrix(b.cols(), 1 + rng.uniform_index(6), rng);
        const double gap = frobenius_norm(matmul(matmul(a, b), c) - matmul(a, matmul(b, c)));
        CHECK(gap <= 1e-9 * frobenius_norm(a) * frobenius_norm(b) * frobenius_norm(c));
    }
}

TEST_CASE("flop counter: exactly 2mnp per product and never decreasing") {
    Rng rng(14);
    std::uint64_t last = flops::read();
    for (int t = 0; t < 20; ++t) {
        const std::size_t m = 1 + rng.uniform_index(9);
        const std::size_t n = 1 + rng.uniform_index(9);
        const std::size_t p = 1 + rng.uniform_index(9);
        const std::uint64_t before = flops::read();
        CHECK(before >= last);
        matmul(random_matrix(m, n, rng), random_matrix(n, p, rng));
        CHECK(flops::read() - before == 2 * m * n * p);
        last = flops::read();
    }
}

TEST_CASE("vecmat") {
    const Matrix m{{1, 2}, {3, 4}};
    CHECK(vecmat(Vector(2), m) == Vector(2));
    CHECK(vecmat(Vector(std::vector<double>{1, 0}), m) == Vector(std::vector<double>{1, 2}));
    Rng rng(15);
    const Matrix w = random_matrix(6, 4, rng);
    Vector v(6);
    for (double& x : v.span()) {
        x = rng.gauss();
    }
    CHECK(vecmat(v, w).values() == matmul(Matrix::from_row(v), w).row_vector(0).values());
    CHECK_THROWS_AS(vecmat(Vector(3), w), DimensionError);
}

TEST_CASE("column and row norms") {
    CHECK(col_norms(Matrix::identity(3)) == Vector(3, 1.0));
    CHECK(col_norms(Matrix{{3}, {4}}) == Vector(1, 5.0));
    Rng rng(16);
    const Matrix m = random_matrix(4, 4, rng);
    const Vector cn = col_norms(m);
    const Vector rn = row_norms(m);
    for (std::size_t k = 0; k < 4; ++k) {
        double cs = 0.0;
        double rs = 0.0;
        for (std::size_t t = 0; t < 4; ++t) {
            cs += m(t, k) * m(t, k);
            rs += m(k, t) * m(k, t);
        }
        CHECK(cn[k] == Catch::Approx(std::sqrt(cs)).epsilon(1e-14));
        CHECK(rn[k] == Catch::Approx(std::sqrt(rs)).epsilon(1e-14));
    }
}

TEST_CASE("rng: bernoulli endpoints and mean") {
    Rng rng(17);
    for (int i = 0; i < 1000; ++i) {
        CHECK(rng.bernoulli(1.0));
        CHECK_FALSE(rng.bernoulli(0.0));
    }
    const int n = 1000000;
    int hits = 0;
    for (int i = 0; i < n; ++i) {
        hits += rng.bernoulli(0.3) ? 1 : 0;
    }
    const double sigma3 = 3.0 * std::sqrt(0.3 * 0.7 / n);
    CHECK(std::abs(hits / static_cast<double>(n) - 0.3) <= sigma3);
}

TEST_CASE("rng: invalid parameters") {
    Rng rng(18);
    CHECK_THROWS_AS(rng.bernoulli(-0.1), ParameterError);
    CHECK_THROWS_AS(rng.bernoulli(1.5), ParameterError);
    CHECK_THROWS_AS(rng.bernoulli(std::nan("")), ParameterError);
    const std::vector<double> zero{0.0, 0.0};
    const std::vector<double> negative{1.0, -1.0};
    CHECK_THROWS_AS(rng.choice_weighted(zero), ParameterError);
    CHECK_THROWS_AS(rng.choice_weighted(negative), ParameterError);
}

TEST_CASE("rng: weighted choice and gauss converge to nominal") {
    Rng rng(19);
    const std::vector<double> w{1.0, 3.0, 0.0, 6.0};
    std::vector<int> counts(4, 0);
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        ++counts[rng.choice_weighted(w)];
    }
    CHECK(counts[2] == 0);
    for (std::size_t i = 0; i < 4; ++i) {
        const double p = w[i] / 10.0;
        CHECK(std::abs(counts[i] / static_cast<double>(n) - p) <= 4.0 * std::sqrt(p * (1 - p) / n) + 1e-12);
    }
    double s = 0.0;
    double s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gauss();
        s += g;
        s2 += g * g;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("rng: same seed reproduces bit-identical streams, streams differ") {
    Rng a(42, 3);
    Rng b(42, 3);
    Rng c(42, 4);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        differs |= x != c.next_u64();
    }
    CHECK(differs);
    Rng r1(5);
    Rng r2(5);
    CHECK(random_matrix(8, 8, r1) == random_matrix(8, 8, r2));
    // split does not advance the parent
    Rng p(9);
    const auto child_first = p.split(1).next_u64();
    CHECK(p.split(1).next_u64() == child_first);
    CHECK(p.next_u64() == Rng(9).next_u64());
}
