#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "mechxfer/flow.hpp"
#include "support/gradcheck.hpp"

using namespace mechxfer;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

FlowConfig config(std::size_t dim, std::size_t depth = 8, std::size_t hidden = 16) {
    FlowConfig c;
    c.dim = dim;
    c.depth = depth;
    c.coupling_hidden = hidden;
    return c;
}

}  // namespace

TEST_CASE("identity configuration maps both ways to the identity") {
    std::mt19937_64 rng(1);
    FlowParams p = identity_flow(config(3));
    Matrix z = random_matrix(20, 3, rng);
    CHECK(analyze(p, z) == z);
    CHECK(synthesize(p, z) == z);
}

TEST_CASE("without an init batch actnorm is the identity") {
    std::mt19937_64 rng(2);
    FlowParams p = init_flow(config(4, 3), 99);
    CHECK(p.actnorm_scale.data() == std::vector<double>(4, 1.0));
    CHECK(p.actnorm_bias.data() == std::vector<double>(4, 0.0));
    Matrix z = random_matrix(10, 4, rng);
    Matrix x = z;
    for (const auto& blk : p.blocks) x = coupling_forward(p.config, blk.coupling, x * blk.mixing.mat());
    CHECK((analyze(p, z) - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("data-dependent actnorm standardizes the init batch") {
    std::mt19937_64 rng(3);
    Matrix batch = random_matrix(64, 3, rng, 3.0);
    batch.col(1).array() += 10.0;
    FlowParams p = init_flow(config(3, 2), 5, batch);
    Matrix a = actnorm_forward(p, batch);
    RowVector mean = a.colwise().mean();
    RowVector var = (a.rowwise() - mean).array().square().colwise().mean();
    for (Eigen::Index j = 0; j < 3; ++j) {
        CHECK(std::abs(mean(j)) < 1e-10);
        CHECK(std::abs(var(j) - 1.0) < 1e-10);
    }
}

TEST_CASE("degenerate init batch is rejected") {
    Matrix batch(5, 2);
    batch.col(0).setConstant(1.0);
    batch.col(1) << 1, 2, 3, 4, 5;
    CHECK_THROWS_AS(init_flow(config(2), 1, batch), std::invalid_argument);
    Matrix one_row(1, 2);
    one_row << 1, 2;
    CHECK_THROWS_AS(init_flow(config(2), 1, one_row), std::invalid_argument);
}

TEST_CASE("mixing matrices are orthogonal at initialization") {
    FlowParams p = init_flow(config(5, 4), 7);
    for (const auto& blk : p.blocks) {
        const Matrix w = blk.mixing.to_matrix();
        CHECK(std::abs(std::abs(w.determinant()) - 1.0) < 1e-10);
        CHECK((w.transpose() * w - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("coupling leaves the first split part unchanged") {
    std::mt19937_64 rng(4);
    FlowParams p = init_flow(config(4, 2), 11);
    REQUIRE(p.config.split_first() == 2);
    REQUIRE(p.config.split_second() == 2);
    Matrix x = random_matrix(30, 4, rng);
    for (const auto& blk : p.blocks) {
        Matrix y = coupling_forward(p.config, blk.coupling, x);
        CHECK(y.leftCols(2) == x.leftCols(2));
        CHECK((y.rightCols(2) - x.rightCols(2)).cwiseAbs().maxCoeff() > 0.0);
    }
    // Odd dimension: split (1, 2).
    CHECK(config(3).split_first() == 1);
    CHECK(config(3).split_second() == 2);
}

TEST_CASE("synthesize inverts analyze in both directions") {
    std::mt19937_64 rng(5);
    for (std::size_t dim : {2u, 3u, 4u, 8u}) {
        for (int draw = 0; draw < 3; ++draw) {
            Matrix batch = random_matrix(50, Eigen::Index(dim), rng, 2.0);
            FlowParams p = init_flow(config(dim), 100 + draw, batch);
            Matrix z = random_matrix(1000, Eigen::Index(dim), rng, 2.0);
            CHECK((synthesize(p, analyze(p, z)) - z).cwiseAbs().maxCoeff() < 1e-6);
            // IC values in the range the data actually produces.
            Matrix s = analyze(p, random_matrix(1000, Eigen::Index(dim), rng, 2.0));
            CHECK((analyze(p, synthesize(p, s)) - s).cwiseAbs().maxCoeff() < 1e-6);
        }
    }
}

TEST_CASE("tape analysis agrees with the plain path") {
    std::mt19937_64 rng(6);
    FlowParams p = init_flow(config(4, 3), 8, random_matrix(20, 4, rng));
    Matrix z = random_matrix(15, 4, rng);
    Tape t;
    Var s = analyze(flow_constants(t, p), t.constant(Tensor::from_matrix(z)));
    CHECK((s.value().to_matrix() - analyze(p, z)).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("analysis gradient matches finite differences") {
    std::mt19937_64 rng(7);
    FlowConfig cfg = config(4, 2, 6);
    FlowParams p = init_flow(cfg, 21, random_matrix(20, 4, rng));
    ParamSet params = flow_param_set(p);
    params.emplace("z", Tensor::from_matrix(random_matrix(5, 4, rng)));
    const Tensor w = Tensor::from_matrix(random_matrix(5, 4, rng));
    ScalarProgram prog = [cfg, w](Tape& t, const ParamVars& v) {
        Var s = analyze(flow_vars(cfg, v), v.at("z"));
        return ad::sum(ad::mul(s, t.constant(w)));
    };
    auto r = evaluate_with_grad(prog, params);
    CHECK(std::isfinite(r.value));
    auto fd = mechxfer::testing::finite_difference_grad(prog, params, 1e-5);
    CHECK(mechxfer::testing::max_relative_error(r.gradients, fd) < 1e-5);
}

TEST_CASE("analysis is injective on random draws") {
    std::mt19937_64 rng(8);
    FlowParams p = init_flow(config(3, 4), 31, random_matrix(40, 3, rng));
    Matrix z = random_matrix(200, 3, rng);
    Matrix s = analyze(p, z);
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index j = i + 1; j < z.rows(); ++j)
            if ((z.row(i) - z.row(j)).norm() > 1e-6) CHECK((s.row(i) - s.row(j)).norm() > 0.0);
}

TEST_CASE("coupling scale stays in (0, 2) for extreme inputs") {
    FlowParams p = init_flow(config(2, 1, 4), 3);
    for (auto& v : p.blocks[0].coupling.w_scale.data()) v *= 1e6;
    Matrix z(3, 2);
    z << 1e3, 1e3, -1e3, 5, 0, 0;
    Matrix s = analyze(p, z);
    CHECK(s.allFinite());
    CHECK((synthesize(p, s) - z).cwiseAbs().maxCoeff() < 1e-6 * 1e3);
}

TEST_CASE("singular mixing matrix is reported") {
    FlowParams p = identity_flow(config(2, 1));
    p.blocks[0].mixing = Tensor({2, 2}, std::vector<double>{1, 2, 2, 4});
    Matrix s(1, 2);
    s << 0.1, 0.2;
    CHECK_THROWS_AS(synthesize(p, s), SingularFlowError);
    CHECK_THROWS_AS(validate_flow(p), SingularFlowError);
}

TEST_CASE("non-finite input is rejected") {
    FlowParams p = identity_flow(config(2, 1));
    Matrix z(1, 2);
    z << std::nan(""), 0.0;
    CHECK_THROWS(analyze(p, z));
}

TEST_CASE("flow file round trip is bit exact") {
    std::mt19937_64 rng(9);
    FlowParams p = init_flow(config(3, 2, 5), 77, random_matrix(10, 3, rng));
    auto path = std::filesystem::temp_directory_path() / "mechxfer_flow_roundtrip.json";
    save_flow(p, path);
    FlowParams q = load_flow(path);
    std::filesystem::remove(path);
    auto a = flow_param_set(p), b = flow_param_set(q);
    REQUIRE(a.size() == b.size());
    for (const auto& [name, t] : a) CHECK(t.data() == b.at(name).data());
}
