#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "catch_amalgamated.hpp"

#include "subsample_nn/mc_matmul.hpp"

using namespace snn;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (double& v : m.span()) {
        v = rng.gauss();
    }
    return m;
}

double sq_frobenius(const Matrix& m) {
    double s = 0.0;
    for (double v : m.span()) {
        s += v * v;
    }
    return s;
}

Matrix weighted_sum(const Matrix& acc, const Matrix& x, double w) {
    Matrix out = acc;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] += w * x.data()[i];
    }
    return out;
}

// Hand-rolled weights ||A[:,i]|| * ||B[i,:]||.
std::vector<double> norm_weights(const Matrix& a, const Matrix& b) {
    std::vector<double> w(a.cols());
    for (std::size_t i = 0; i < a.cols(); ++i) {
        double ca = 0.0;
        double rb = 0.0;
        for (std::size_t r = 0; r < a.rows(); ++r) {
            ca += a(r, i) * a(r, i);
        }
        for (std::size_t c = 0; c < b.cols(); ++c) {
            rb += b(i, c) * b(i, c);
        }
        w[i] = std::sqrt(ca) * std::sqrt(rb);
    }
    return w;
}

double analytic_bernoulli_error(const std::vector<double>& w, const std::vector<double>& p) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        s += (1.0 - p[i]) / p[i] * w[i] * w[i];
    }
    return s;
}

struct Moments {
    Matrix mean;
    double mean_sq_error = 0.0;
};

// Every Bernoulli keep/drop pattern, weighted by its probability.
Moments enumerate_bernoulli(const Matrix& a, const Matrix& b, const Vector& p) {
    const std::size_t n = p.size();
    const Matrix exact = matmul(a, b);
    Moments out{Matrix(a.rows(), b.cols())};
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
        SamplePlan plan;
        double weight = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask & (std::size_t{1} << i)) {
                weight *= p[i];
                plan.indices.push_back(i);
                plan.scales.push_back(1.0 / p[i]);
            } else {
                weight *= 1.0 - p[i];
            }
        }
        if (weight == 0.0) {
            continue;
        }
        const Matrix est = sampled_product(a, b, plan);
        out.mean = weighted_sum(out.mean, est, weight);
        out.mean_sq_error += weight * sq_frobenius(est - exact);
    }
    return out;
}

// Every ordered sequence of c draws with replacement.
Matrix enumerate_cr(const Matrix& a, const Matrix& b, const Vector& p, std::size_t c) {
    const std::size_t n = p.size();
    Matrix mean(a.rows(), b.cols());
    std::vector<std::size_t> seq(c, 0);
    std::function<void(std::size_t)> rec = [&](std::size_t depth) {
        if (depth == c) {
            SamplePlan plan;
            double weight = 1.0;
            for (std::size_t i : seq) {
                weight *= p[i];
                plan.indices.push_back(i);
                plan.scales.push_back(p[i] > 0.0 ? 1.0 / (static_cast<double>(c) * p[i]) : 0.0);
            }
            if (weight > 0.0) {
                mean = weighted_sum(mean, sampled_product(a, b, plan), weight);
            }
            return;
        }
        for (std::size_t i = 0; i < n; ++i) {
            seq[depth] = i;
            rec(depth + 1);
        }
    };
    rec(0);
    return mean;
}

void check_close(const Matrix& x, const Matrix& y, double tol) {
    REQUIRE(x.rows() == y.rows());
    REQUIRE(x.cols() == y.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(std::abs(x.data()[i] - y.data()[i]) <= tol);
    }
}

} // namespace

TEST_CASE("optimal_probs_cr: closed forms and degenerate input") {
    const Vector p = optimal_probs_cr(Matrix{{1, 0}, {0, 2}}, Matrix::identity(2));
    CHECK(p[0] == Catch::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(p[1] == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
    const Vector u = optimal_probs_cr(Matrix::identity(4), Matrix::identity(4));
    for (double v : u) {
        CHECK(v == 0.25);
    }
    CHECK_THROWS_AS(optimal_probs_cr(Matrix(2, 3), Matrix(3, 2)), DegenerateInputError);
    CHECK_THROWS_AS(optimal_probs_cr(Matrix(2, 3), Matrix(2, 2)), DimensionError);
}

TEST_CASE("approx_matmul_cr: full exhaustive plan and 1x1 inputs are exact") {
    Rng rng(31);
    const Matrix a = random_matrix(3, 4, rng);
    const Matrix b = random_matrix(4, 2, rng);
    SamplePlan plan;
    plan.mode = SampleMode::WithReplacement;
    plan.probabilities = Vector(4, 0.25);
    plan.budget = 4;
    for (std::size_t i = 0; i < 4; ++i) {
        plan.indices.push_back(i);
        plan.scales.push_back(1.0 / (4.0 * 0.25));
    }
    CHECK(sampled_product(a, b, plan) == matmul(a, b));
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        CHECK(approx_matmul_cr(Matrix{{2.5}}, Matrix{{-3.0}}, 1 + seed % 4, seed)(0, 0) == Catch::Approx(-7.5));
    }
    CHECK_THROWS_AS(approx_matmul_cr(a, b, 0, std::uint64_t{1}), ParameterError);
}

TEST_CASE("approx_matmul_cr: empirical mean within 3 standard errors") {
    Rng rng(32);
    const Matrix a = random_matrix(3, 3, rng);
    const Matrix b = random_matrix(3, 3, rng);
    const Matrix exact = matmul(a, b);
    const int trials = 100000;
    Matrix sum(3, 3);
    Matrix sum_sq(3, 3);
    for (int t = 0; t < trials; ++t) {
        const Matrix est = approx_matmul_cr(a, b, 2, static_cast<std::uint64_t>(t));
        for (std::size_t i = 0; i < 9; ++i) {
            sum.data()[i] += est.data()[i];
            sum_sq.data()[i] += est.data()[i] * est.data()[i];
        }
    }
    for (std::size_t i = 0; i < 9; ++i) {
        const double mean = sum.data()[i] / trials;
        const double var = sum_sq.data()[i] / trials - mean * mean;
        const double se = std::sqrt(var / trials);
        CHECK(std::abs(mean - exact.data()[i]) <= 3.0 * se + 1e-12);
    }
}

TEST_CASE("approx_matmul_cr: optimal p beats perturbed distributions empirically") {
    Rng rng(33);
    const Matrix a = random_matrix(5, 5, rng);
    const Matrix b = random_matrix(5, 5, rng);
    const Matrix exact = matmul(a, b);
    const std::vector<double> w = norm_weights(a, b);
    double total = 0.0;
    for (double v : w) {
        total += v;
    }
    Vector optimal(5);
    for (std::size_t i = 0; i < 5; ++i) {
        optimal[i] = w[i] / total;
    }
    const std::size_t c = 2;
    const int trials = 10000;
    // Common random numbers: trial t reuses the same stream for every p.
    auto empirical_error = [&](const Vector& p) {
        double s = 0.0;
        for (int t = 0; t < trials; ++t) {
            Rng draw(1000 + static_cast<std::uint64_t>(t));
            s += sq_frobenius(sampled_product(a, b, draw_cr_plan(p, c, draw)) - exact);
        }
        return s / trials;
    };
    const double best = empirical_error(optimal);
    CHECK(best == Catch::Approx(cr_expected_error(a, b, optimal, c)).epsilon(0.05));
    double best_perturbed = INFINITY;
    for (int d = 0; d < 200; ++d) {
        Vector q(5);
        double qs = 0.0;
        for (double& v : q) {
            v = rng.uniform() + 0.05;
            qs += v;
        }
        Vector p(5);
        for (std::size_t i = 0; i < 5; ++i) {
            p[i] = 0.5 * optimal[i] + 0.5 * q[i] / qs;
        }
        best_perturbed = std::min(best_perturbed, empirical_error(p));
    }
    CHECK(best < best_perturbed);
}

TEST_CASE("unbiasedness by exhaustive enumeration, both modes") {
    Rng rng(34);
    for (std::size_t m = 2; m <= 3; ++m) {
        for (std::size_t p = 2; p <= 3; ++p) {
            for (std::size_t n = 1; n <= 4; ++n) {
                const Matrix a = random_matrix(m, n, rng);
                const Matrix b = random_matrix(n, p, rng);
                const Matrix exact = matmul(a, b);
                for (std::size_t k = 1; k <= n; ++k) {
                    const Vector probs = optimal_probs_bernoulli(a, b, k);
                    const Moments mom = enumerate_bernoulli(a, b, probs);
                    check_close(mom.mean, exact, 1e-12);
                    CHECK(std::abs(mom.mean_sq_error - bernoulli_expected_error(a, b, probs)) <= 1e-12);
                }
                const Vector cr = optimal_probs_cr(a, b);
                for (std::size_t c = 1; c <= 3; ++c) {
                    check_close(enumerate_cr(a, b, cr, c), exact, 1e-12);
                }
            }
        }
    }
}

TEST_CASE("bernoulli: n=3, k=2 enumeration equals AB") {
    Rng rng(35);
    const Matrix a = random_matrix(3, 3, rng);
    const Matrix b = random_matrix(3, 3, rng);
    const Moments mom = enumerate_bernoulli(a, b, optimal_probs_bernoulli(a, b, 2));
    check_close(mom.mean, matmul(a, b), 1e-12);
}

TEST_CASE("optimal_probs_bernoulli: closed forms") {
    Rng rng(36);
    const Matrix a = random_matrix(4, 6, rng);
    const Matrix b = random_matrix(6, 3, rng);
    for (double v : optimal_probs_bernoulli(a, b, 6)) {
        CHECK(v == 1.0);
    }
    for (double v : optimal_probs_bernoulli(Matrix::identity(6), Matrix::identity(6), 3)) {
        CHECK(v == Catch::Approx(0.5).epsilon(1e-15));
    }
    CHECK_THROWS_AS(optimal_probs_bernoulli(a, b, 7), ParameterError);
    CHECK_THROWS_AS(optimal_probs_bernoulli(a, b, 0), ParameterError);

    // zero-norm index: never sampled, estimator still exact in expectation
    Matrix z = a;
    for (std::size_t r = 0; r < z.rows(); ++r) {
        z(r, 2) = 0.0;
    }
    const Vector pz = optimal_probs_bernoulli(z, b, 3);
    CHECK(pz[2] == 0.0);
    Rng draw(1);
    for (int t = 0; t < 200; ++t) {
        const SamplePlan plan = draw_bernoulli_plan(pz, 3, draw);
        CHECK(std::find(plan.indices.begin(), plan.indices.end(), 2u) == plan.indices.end());
    }
}

TEST_CASE("optimal_probs_bernoulli: clipping matches a grid-search minimizer") {
    const Matrix a{{10, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
    const Vector p = optimal_probs_bernoulli(a, Matrix::identity(4), 2);
    CHECK(p[0] == 1.0);
    for (std::size_t i = 1; i < 4; ++i) {
        CHECK(p[i] == Catch::Approx(1.0 / 3.0).epsilon(1e-14));
    }
    const std::vector<double> w{10, 1, 1, 1};
    const double ours = analytic_bernoulli_error(w, p.values());
    double grid_best = INFINITY;
    std::vector<double> arg;
    const int steps = 100;
    for (int i0 = 1; i0 <= steps; ++i0) {
        for (int i1 = 1; i1 <= steps; ++i1) {
            for (int i2 = 1; i2 <= steps; ++i2) {
                const std::vector<double> q{i0 / double(steps), i1 / double(steps), i2 / double(steps),
                                            2.0 - (i0 + i1 + i2) / double(steps)};
                if (q[3] <= 0.0 || q[3] > 1.0) {
                    continue;
                }
                const double e = analytic_bernoulli_error(w, q);
                if (e < grid_best) {
                    grid_best = e;
                    arg = q;
                }
            }
        }
    }
    CHECK(ours <= grid_best + 1e-12);
    CHECK(arg[0] == 1.0);
}

TEST_CASE("optimal_probs_bernoulli: beats 1000 random valid distributions") {
    Rng rng(37);
    const Matrix a = random_matrix(6, 12, rng);
    Matrix b = random_matrix(12, 4, rng);
    for (std::size_t c = 0; c < 4; ++c) {
        b(0, c) *= 20.0; // forces clipping at larger k
    }
    const std::vector<double> w = norm_weights(a, b);
    for (std::size_t k : {1u, 4u, 9u}) {
        const Vector p = optimal_probs_bernoulli(a, b, k);
        double sum = 0.0;
        for (double v : p) {
            CHECK((v > 0.0 && v <= 1.0));
            sum += v;
        }
        CHECK(sum == Catch::Approx(static_cast<double>(k)).epsilon(1e-12));
        const double ours = analytic_bernoulli_error(w, p.values());
        CHECK(ours == Catch::Approx(bernoulli_expected_error(a, b, p)).epsilon(1e-12));
        for (int d = 0; d < 1000; ++d) {
            std::vector<double> r(12);
            for (double& v : r) {
                v = rng.uniform() + 1e-3;
            }
            const Vector q = waterfill_probabilities(r, k);
            CHECK(ours <= analytic_bernoulli_error(w, q.values()) + 1e-9);
        }
    }
}

TEST_CASE("approx_matmul_bernoulli: k=n exact, error formula within 5%") {
    Rng rng(38);
    const Matrix a = random_matrix(4, 10, rng);
    const Matrix b = random_matrix(10, 3, rng);
    const ApproxProduct full = approx_matmul_bernoulli(a, b, 10, std::uint64_t{3});
    CHECK(full.plan.indices.size() == 10);
    check_close(full.product, matmul(a, b), 1e-12);

    const Matrix exact = matmul(a, b);
    const Vector p = optimal_probs_bernoulli(a, b, 4);
    const double predicted = bernoulli_expected_error(a, b, p);
    Rng draw(39);
    double s = 0.0;
    double kept = 0.0;
    const int trials = 100000;
    for (int t = 0; t < trials; ++t) {
        const ApproxProduct r = approx_matmul_bernoulli(a, b, 4, draw);
        s += sq_frobenius(r.product - exact);
        kept += static_cast<double>(r.plan.indices.size());
    }
    CHECK(std::abs(s / trials - predicted) <= 0.05 * predicted);
    CHECK(kept / trials == Catch::Approx(4.0).epsilon(0.01));
}

TEST_CASE("approx_matmul_bernoulli: counted FLOP ratio tends to k/n") {
    Rng rng(40);
    double last_gap = INFINITY;
    for (std::size_t n : {32u, 64u, 128u, 256u}) {
        const Matrix a = random_matrix(n, n, rng);
        const Matrix b = random_matrix(n, n, rng);
        const std::size_t k = n / 8;
        auto before = flops::read();
        matmul(a, b);
        const double exact = static_cast<double>(flops::read() - before);
        double approx = 0.0;
        const int reps = 20;
        for (int r = 0; r < reps; ++r) {
            before = flops::read();
            approx_matmul_bernoulli(a, b, k, rng);
            approx += static_cast<double>(flops::read() - before);
        }
        const double gap = std::abs(approx / reps / exact - 0.125);
        CHECK(gap < last_gap);
        last_gap = gap;
    }
    CHECK(last_gap <= 0.0125);
}
