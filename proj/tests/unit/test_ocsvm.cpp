#include <cmath>
#include <random>

#include "doctest.h"
#include "mechxfer/ocsvm.hpp"
#include "support/qp_oracle.hpp"

using namespace mechxfer;

namespace {

Matrix random_points(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng, double spread = 1.0) {
    std::normal_distribution<double> g(0.0, spread);
    Matrix m(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

}  // namespace

TEST_CASE("two distinct points share the mass equally") {
    Matrix x(2, 2);
    x << 0.0, 0.0, 1.0, 2.0;
    auto dual = fit_ocsvm_dual(x);
    CHECK(std::abs(dual.alpha(0) - 0.5) < 1e-12);
    CHECK(std::abs(dual.alpha(1) - 0.5) < 1e-12);
}

TEST_CASE("identical points are all inliers") {
    Matrix x = Matrix::Constant(7, 3, 1.25);
    auto m = fit_ocsvm(x);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        auto r = is_inlier(m, x.row(i));
        CHECK(r.inlier);
        CHECK(r.value >= 0.0);
    }
}

TEST_CASE("objective matches the exhaustive QP oracle on small inputs") {
    std::mt19937_64 rng(1);
    const double nus[] = {0.1, 0.5, 0.8};
    for (int trial = 0; trial < 20; ++trial) {
        CAPTURE(trial);
        const Eigen::Index n = 3 + trial % 4;
        const double nu = nus[trial % 3];
        Matrix x = random_points(n, 2, rng);
        OcsvmOptions opt;
        opt.nu = nu;
        auto dual = fit_ocsvm_dual(x, opt);
        const double upper = 1.0 / (nu * double(n));
        const auto oracle = mechxfer::testing::one_class_qp_oracle(mechxfer::testing::rbf_gram(x, 2.0), upper);
        CHECK(std::abs(dual.objective - oracle.objective) < 1e-4);
        CHECK(std::abs(dual.alpha.sum() - 1.0) < 1e-8);
        CHECK(dual.alpha.minCoeff() >= -1e-10);
        CHECK(dual.alpha.maxCoeff() <= upper + 1e-10);
    }
}

TEST_CASE("margin support vectors sit on the boundary") {
    std::mt19937_64 rng(2);
    Matrix x = random_points(80, 2, rng);
    auto m = fit_ocsvm(x);
    REQUIRE(m.margin_support > 0);
    for (Eigen::Index k = 0; k < m.alpha.size(); ++k)
        if (m.alpha(k) > 1e-8 && m.alpha(k) < m.upper - 1e-8) CHECK(std::abs(decision_value(m, m.support.row(k))) < 1e-6);
}

TEST_CASE("distant points are outliers") {
    std::mt19937_64 rng(3);
    Matrix x = random_points(40, 3, rng);
    auto m = fit_ocsvm(x);
    RowVector far = RowVector::Constant(3, 1e3);
    auto r = is_inlier(m, far);
    CHECK_FALSE(r.inlier);
    CHECK(r.value == doctest::Approx(-m.rho).epsilon(1e-12));
    CHECK(m.rho > 0.0);
}

TEST_CASE("nu-property and dual feasibility over 50 datasets") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::Index n = 50 + 10 * (trial % 10);
        Matrix x = random_points(n, 2 + trial % 3, rng, 0.5 + 0.1 * (trial % 7));
        auto dual = fit_ocsvm_dual(x);
        auto m = fit_ocsvm(x);
        const Vector v = decision_values(m, x);
        // Margin points carry values within the solver tolerance of 0.
        const double outliers = double((v.array() < -1e-6).count()) / double(n);
        const double svs = double((dual.alpha.array() > 0.0).count()) / double(n);
        CHECK(outliers <= 0.1 + 2.0 / double(n));
        CHECK(svs >= 0.1 - 2.0 / double(n));
        CHECK(std::abs(dual.alpha.sum() - 1.0) < 1e-8);
        CHECK(dual.alpha.maxCoeff() <= 1.0 / (0.1 * double(n)) + 1e-10);
    }
}

TEST_CASE("translation leaves inlier flags unchanged") {
    std::mt19937_64 rng(5);
    Matrix x = random_points(60, 2, rng);
    Matrix probe = random_points(30, 2, rng, 2.0);
    RowVector shift(2);
    shift << 3.5, -1.25;
    auto a = fit_ocsvm(x);
    auto b = fit_ocsvm(x.rowwise() + shift);
    const Vector va = decision_values(a, probe);
    const Vector vb = decision_values(b, probe.rowwise() + shift);
    for (Eigen::Index i = 0; i < va.size(); ++i)
        if (std::abs(va(i)) > 1e-6) CHECK((va(i) >= 0.0) == (vb(i) >= 0.0));
}

TEST_CASE("gamma defaults to the dimension") {
    Matrix x(3, 4);
    x.setRandom();
    CHECK(fit_ocsvm(x).gamma == 4.0);
    OcsvmOptions opt;
    opt.gamma = 0.7;
    CHECK(fit_ocsvm(x, opt).gamma == 0.7);
}

TEST_CASE("errors") {
    CHECK_THROWS_AS(fit_ocsvm(Matrix::Zero(1, 2)), std::invalid_argument);
    OcsvmOptions bad;
    bad.nu = 0.0;
    CHECK_THROWS_AS(fit_ocsvm(Matrix::Random(4, 2), bad), std::invalid_argument);
    bad.nu = 1.0;
    CHECK_THROWS_AS(fit_ocsvm(Matrix::Random(4, 2), bad), std::invalid_argument);

    std::mt19937_64 rng(6);
    OcsvmOptions capped;
    capped.max_iterations = 1;
    try {
        fit_ocsvm(random_points(200, 2, rng), capped);
        FAIL("expected non-convergence");
    } catch (const OcsvmConvergenceError& e) {
        CHECK(e.gap() > 1e-6);
    }
}
