#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mechxfer/ridge.hpp"
#include "support/krr_oracle.hpp"

using namespace mechxfer;
using mechxfer::testing::brute_force_cv;

namespace {

Matrix uniform(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

Vector noisy_sine(const Matrix& x, std::mt19937_64& rng, double noise) {
    std::normal_distribution<double> g(0.0, noise);
    Vector y(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) y(i) = std::sin(1.5 * x(i, 0)) + (noise > 0 ? g(rng) : 0.0);
    return y;
}

std::vector<std::size_t> iota_indices(std::size_t n, std::size_t from = 0) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), from);
    return v;
}

}  // namespace

TEST_CASE("median heuristic") {
    Matrix two(2, 1);
    two << 0.0, 2.0;
    CHECK(median_bandwidth(two) == 4.0);
    CHECK(median_bandwidth(Matrix::Constant(5, 2, 3.0)) == 1.0);
    Matrix three(3, 1);
    three << 0.0, 1.0, 3.0;
    CHECK(median_bandwidth(three) == 4.0);
    // Squared gaps sorted: 1 1 1 4 4 9, middle pair (1, 4).
    Matrix four(4, 1);
    four << 0.0, 1.0, 2.0, 3.0;
    CHECK(median_bandwidth(four) == 2.5);
    CHECK_THROWS_AS(median_bandwidth(Matrix::Zero(1, 2)), std::invalid_argument);
}

TEST_CASE("fit examples") {
    std::mt19937_64 rng(1);
    Matrix x = uniform(10, 2, rng);
    Vector y = uniform(10, 1, rng, -1.0, 1.0).col(0);
    auto heavy = fit_krr(x, y, 1e6, 1.0);
    CHECK(predict_rows(heavy, x).cwiseAbs().maxCoeff() < 1e-3);

    Matrix one(1, 2);
    one << 0.3, -0.7;
    Vector y1(1);
    y1 << 4.0;
    CHECK(predict(fit_krr(one, y1, 1.0, 2.0), one.row(0)) == doctest::Approx(2.0).epsilon(1e-15));

    Matrix x20 = uniform(20, 3, rng);
    Vector y20 = uniform(20, 1, rng).col(0);
    auto m = fit_krr(x20, y20, 0.01, median_bandwidth(x20));
    Matrix a = rbf_kernel(x20, x20, m.gamma);
    a.diagonal().array() += 0.01;
    CHECK((a * m.alpha - y20).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("prediction") {
    std::mt19937_64 rng(2);
    Matrix x = uniform(12, 2, rng);
    Vector y = noisy_sine(x, rng, 0.1);
    const double gamma = median_bandwidth(x), lambda = 0.05;
    auto m = fit_krr(x, y, lambda, gamma);
    CHECK(std::abs(predict(m, RowVector::Constant(2, 1e3))) < 1e-300);

    // Hat-matrix oracle built from the test's own kernel.
    Eigen::MatrixXd k(12, 12);
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j) k(i, j) = mechxfer::testing::rbf(x.row(i), x.row(j), gamma);
    const Eigen::MatrixXd h = k * (k + lambda * Eigen::MatrixXd::Identity(12, 12)).inverse();
    const Eigen::VectorXd hy = h * y;
    for (int i = 0; i < 12; ++i) {
        CHECK(std::abs(predict(m, x.row(i)) - hy(i)) < 1e-10);
        CHECK(h(i, i) > 0.0);
        CHECK(h(i, i) < 1.0);
    }
    CHECK(predict(m, x.row(3)) == predict(m, x.row(3)));

    // Lipschitz bound C = sum|alpha| sqrt(2 / (gamma e)).
    const double c = m.alpha.cwiseAbs().sum() * std::sqrt(2.0 / (gamma * std::exp(1.0)));
    for (int t = 0; t < 20; ++t) {
        RowVector p = uniform(1, 2, rng).row(0);
        RowVector d = 1e-3 * uniform(1, 2, rng).row(0);
        CHECK(std::abs(predict(m, p) - predict(m, RowVector(p + d))) <= c * d.norm() * (1 + 1e-9));
    }
}

TEST_CASE("analytic leave-one-out equals retraining") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        CAPTURE(trial);
        const Eigen::Index m = 5 + trial % 26;
        Matrix x = uniform(m, 1 + trial % 3, rng);
        Vector y = noisy_sine(x, rng, 0.2);
        const double gamma = median_bandwidth(x);
        const double lambda = std::ldexp(1.0, -10 + trial);
        const auto all = iota_indices(std::size_t(m));
        CHECK(std::abs(loocv_mse(x, y, lambda, gamma, all) - brute_force_cv(x, y, lambda, gamma, all)) < 1e-8);
        // Restricted to the last few rows.
        const auto tail = iota_indices(3, std::size_t(m) - 3);
        CHECK(std::abs(loocv_mse(x, y, lambda, gamma, tail) - brute_force_cv(x, y, lambda, gamma, tail)) < 1e-8);
        const Vector r = loocv_residuals(x, y, lambda, gamma, tail);
        for (std::size_t t = 0; t < tail.size(); ++t)
            CHECK(std::abs(r(Eigen::Index(t)) * r(Eigen::Index(t)) -
                           brute_force_cv(x, y, lambda, gamma, std::span<const std::size_t>(&tail[t], 1))) < 1e-8);
        const auto sel = select_lambda(x, y, gamma, tail);
        const auto grid = lambda_grid();
        for (std::size_t g = 0; g < grid.size(); g += 5)
            CHECK(std::abs(sel.scores[g] - brute_force_cv(x, y, grid[g], gamma, tail)) < 1e-8);
    }
}

TEST_CASE("leave-one-out errors") {
    Matrix one(1, 1);
    one << 0.0;
    Vector y1(1);
    y1 << 1.0;
    const std::vector<std::size_t> first{0};
    CHECK_THROWS_AS(loocv_mse(one, y1, 1.0, 1.0, first), std::invalid_argument);
    CHECK_THROWS_AS(loocv_mse(one, y1, 1.0, 1.0, {}), std::invalid_argument);

    std::mt19937_64 rng(4);
    Matrix x = uniform(6, 2, rng);
    Vector y = noisy_sine(x, rng, 0.0);
    CHECK_THROWS_AS(loocv_mse(x, y, 1e-20, 1.0, first), DegenerateLeverageError);
}

TEST_CASE("duplicated rows") {
    std::mt19937_64 rng(5);
    Matrix x = uniform(8, 2, rng);
    Vector y = noisy_sine(x, rng, 0.3);
    Matrix xx(16, 2);
    xx << x, x;
    Vector yy(16);
    yy << y, y;
    const auto copies = iota_indices(8);
    const double gamma = median_bandwidth(x);
    const double dup = loocv_mse(xx, yy, 0.1, gamma, copies);
    CHECK(std::isfinite(dup));
    CHECK(std::abs(dup - brute_force_cv(xx, yy, 0.1, gamma, copies)) < 1e-8);
    // The surviving copy makes the held-out point easier to predict.
    CHECK(dup <= loocv_mse(x, y, 0.1, gamma, copies));
}

TEST_CASE("lambda selection") {
    CHECK(lambda_grid().size() == 21);
    CHECK(lambda_grid().front() == std::ldexp(1.0, -10));
    CHECK(lambda_grid().back() == 1024.0);

    std::mt19937_64 rng(6);
    int large = 0, small = 0;
    for (int seed = 0; seed < 20; ++seed) {
        Matrix x = uniform(25, 1, rng);
        std::normal_distribution<double> g(0.0, 1.0);
        Vector y(25);
        for (auto& v : y.reshaped()) v = g(rng);
        const auto all = iota_indices(25);
        const auto sel = select_lambda(x, y, median_bandwidth(x), all);
        CHECK(sel.scores.size() == 21);
        large += sel.lambda >= 1.0;
        small += sel.lambda < 1.0;
    }
    CHECK(large > small);

    Matrix x = uniform(30, 1, rng);
    Vector y = noisy_sine(x, rng, 0.0);
    const auto all = iota_indices(30);
    const double gamma = median_bandwidth(x);
    const auto sel = select_lambda(x, y, gamma, all);
    CHECK(sel.score <= loocv_mse(x, y, 1024.0, gamma, all));
    CHECK(std::abs(sel.score - loocv_mse(x, y, sel.lambda, gamma, all)) < 1e-8);

    // Every grid value ties; the smallest must win.
    Matrix two(2, 1);
    two << 0.0, 1e3;  // far apart: K = I, LOO predictions are exactly 0
    Vector y2(2);
    y2 << 1.0, 1.0;
    const std::vector<std::size_t> both{0, 1};
    const auto tsel = select_lambda(two, y2, 1.0, both);
    CHECK(tsel.lambda == std::ldexp(1.0, -10));
    for (double s : tsel.scores) CHECK(s == 1.0);
}

TEST_CASE("grouped leave-out equals retraining") {
    std::mt19937_64 rng(7);
    Matrix x = uniform(20, 2, rng);
    Vector y = noisy_sine(x, rng, 0.1);
    const std::vector<std::size_t> held{0, 1, 2};
    const std::vector<std::vector<std::size_t>> drop{{0, 5, 6}, {1, 7}, {2, 8, 9, 10}};
    const double gamma = median_bandwidth(x);
    for (double lambda : {0.01, 0.5, 8.0})
        CHECK(std::abs(grouped_cv_mse(x, y, lambda, gamma, held, drop) - brute_force_cv(x, y, lambda, gamma, held, drop)) <
              1e-8);
    const auto sel = select_lambda_grouped(x, y, gamma, held, drop);
    const auto grid = lambda_grid();
    for (std::size_t g = 0; g < grid.size(); ++g)
        CHECK(std::abs(sel.scores[g] - brute_force_cv(x, y, grid[g], gamma, held, drop)) < 1e-8);
    const std::vector<std::vector<std::size_t>> missing{{5}, {1}, {2}};
    CHECK_THROWS(grouped_cv_mse(x, y, 1.0, gamma, held, missing));
}
