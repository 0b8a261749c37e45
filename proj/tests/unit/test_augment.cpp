#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>

#include "doctest.h"
#include "mechxfer/augment.hpp"
#include "mechxfer/synth.hpp"
#include "mechxfer/ustat.hpp"

using namespace mechxfer;

namespace {

DomainDataset random_domain(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    DomainDataset d;
    d.id = "t";
    d.rows.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < d.rows.size(); ++i) d.rows.data()[i] = g(rng);
    return d;
}

}  // namespace

TEST_CASE("extract components") {
    const auto d = random_domain(6, 4, 1);
    CHECK(extract_ics(identity_flow(FlowConfig{4, 2, 3}), d) == d.rows);
    const auto flow = init_flow(FlowConfig{4, 3, 8}, 2);
    const Matrix s = extract_ics(flow, d);
    CHECK(s.rows() == 6);
    CHECK(s.cols() == 4);
    CHECK((synthesize(flow, s) - d.rows).cwiseAbs().maxCoeff() < 1e-6);
    CHECK_THROWS_AS(extract_ics(flow, DomainDataset{}), std::invalid_argument);
}

TEST_CASE("combination plans") {
    Rng rng(3);
    const auto small = plan_combinations(2, 2, kDefaultCombinationBudget, rng);
    CHECK(small.exhaustive);
    const std::vector<std::vector<std::size_t>> expect{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    CHECK(small.indices == expect);

    const auto full = plan_combinations(6, 4, kDefaultCombinationBudget, rng);
    CHECK(full.exhaustive);
    CHECK(full.indices.size() == 1296);
    CHECK(std::set<std::vector<std::size_t>>(full.indices.begin(), full.indices.end()).size() == 1296);

    const auto sub = plan_combinations(100, 4, 10000, rng);
    CHECK_FALSE(sub.exhaustive);
    CHECK(sub.indices.size() == 10000);
    const std::set<std::vector<std::size_t>> unique(sub.indices.begin(), sub.indices.end());
    CHECK(unique.size() == 10000);
    for (std::size_t i = 0; i < 100; ++i) CHECK(unique.count(std::vector<std::size_t>(4, i)) == 1);
    for (const auto& t : sub.indices)
        for (auto v : t) CHECK(v < 100);

    Rng a(7), b(7);
    CHECK(plan_combinations(30, 3, 500, a).indices == plan_combinations(30, 3, 500, b).indices);

    CHECK_THROWS_AS(plan_combinations(10, 2, 9, rng), std::invalid_argument);
    CHECK_THROWS_AS(plan_combinations(10, 1, 100, rng), std::invalid_argument);
    CHECK_THROWS_AS(plan_combinations(0, 2, 100, rng), std::invalid_argument);
}

TEST_CASE("candidates") {
    Rng rng(4);
    Matrix two(2, 2);
    two << 1.0, 2.0, 3.0, 4.0;
    const auto plan = plan_combinations(2, 2, 100, rng);
    Matrix swaps(4, 2);
    swaps << 1.0, 2.0, 1.0, 4.0, 3.0, 2.0, 3.0, 4.0;
    CHECK(synthesize_candidates(identity_flow(FlowConfig{2, 1, 2}), two, plan) == swaps);

    const auto d = random_domain(5, 3, 5);
    const auto flow = init_flow(FlowConfig{3, 4, 8}, 6);
    const Matrix s = extract_ics(flow, d);
    const auto p = plan_combinations(5, 3, kDefaultCombinationBudget, rng);
    const Matrix c = synthesize_candidates(flow, s, p);
    CHECK(std::size_t(c.rows()) == p.indices.size());
    for (std::size_t t = 0; t < p.indices.size(); ++t)
        if (is_diagonal(p.indices[t]))
            CHECK((c.row(Eigen::Index(t)) - d.rows.row(Eigen::Index(p.indices[t][0]))).cwiseAbs().maxCoeff() < 1e-6);

    CombinationPlan bad = p;
    bad.indices[3][1] = 5;
    CHECK_THROWS_AS(synthesize_candidates(flow, s, bad), std::out_of_range);
}

TEST_CASE("assembly") {
    Rng rng(8);
    const auto d = random_domain(4, 2, 9);
    const auto flow = init_flow(FlowConfig{2, 2, 4}, 10);
    const Matrix s = extract_ics(flow, d);
    const auto plan = plan_combinations(4, 2, kDefaultCombinationBudget, rng);
    const Matrix c = synthesize_candidates(flow, s, plan);

    const auto all = filter_and_assemble(c, plan, nullptr, d.rows);
    CHECK(all.training_rows().rows() == 16);
    CHECK(all.kept_synthetic() == 12);
    CHECK(all.inlier_fraction() == 1.0);
    CHECK(all.training_rows().topRows(4) == d.rows);
    const auto prov = all.training_provenance();
    REQUIRE(prov.size() == 16);
    CHECK(prov[2] == std::vector<std::size_t>{2, 2});

    // Provenance reproduces each kept row bit-exactly.
    const Matrix rows = all.training_rows();
    for (std::size_t r = 4; r < prov.size(); ++r) {
        CombinationPlan one{4, 2, {prov[r]}, false};
        CHECK(synthesize_candidates(flow, s, one).row(0) == rows.row(Eigen::Index(r)));
    }

    // A filter fitted far away rejects every candidate.
    const auto far = fit_ocsvm(Matrix(d.rows.array() + 100.0));
    const auto none = filter_and_assemble(c, plan, &far, d.rows);
    CHECK(none.kept_synthetic() == 0);
    CHECK(none.inlier_fraction() == 0.0);
    CHECK(none.training_rows() == d.rows);

    CHECK_THROWS_AS(filter_and_assemble(c.topRows(3), plan, nullptr, d.rows), ShapeError);
}

TEST_CASE("mean loss over an exhaustive plan equals the V-statistic") {
    Rng rng(11);
    for (std::size_t dim : {2, 3}) {
        CAPTURE(dim);
        const auto d = random_domain(5, dim, 12 + dim);
        const auto flow = init_flow(FlowConfig{dim, 3, 8}, 13);
        const Matrix s = extract_ics(flow, d);
        const auto plan = plan_combinations(5, dim, kDefaultCombinationBudget, rng);
        const auto set = filter_and_assemble(synthesize_candidates(flow, s, plan), plan, nullptr, d.rows);
        const PointLoss loss = [](const Eigen::Ref<const RowVector>& z) {
            const double r = z(z.size() - 1) - 0.7 * z(0);
            return r * r;
        };
        double mean = 0.0;
        for (Eigen::Index r = 0; r < set.candidates.rows(); ++r) mean += loss(set.candidates.row(r));
        mean /= double(set.candidates.rows());
        CHECK(std::abs(mean - v_statistic_risk(flow, loss, s).value) < 1e-12);
    }
}

TEST_CASE("recombinations under the true mixing mostly pass the source filter") {
    std::vector<double> rates;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SynthConfig cfg;
        cfg.samples_per_domain = 300;
        cfg.target_samples = 6;
        cfg.seed = seed;
        const auto b = make_benchmark(cfg);
        std::vector<DomainDataset> src;
        for (const auto& s : b.sources) src.push_back(s.data);
        const auto model = fit_ocsvm(pool_rows(src));
        Rng rng(1);
        const Matrix s = extract_ics(b.mixing, b.target.data);
        const auto plan = plan_combinations(6, 2, kDefaultCombinationBudget, rng);
        const auto set =
            filter_and_assemble(synthesize_candidates(b.mixing, s, plan), plan, &model, b.target.data.rows);
        rates.push_back(set.inlier_fraction());
    }
    std::nth_element(rates.begin(), rates.begin() + 2, rates.end());
    CHECK(rates[2] > 0.5);
}

TEST_CASE("csv export") {
    Rng rng(2);
    const auto d = random_domain(3, 2, 3);
    const auto flow = identity_flow(FlowConfig{2, 1, 2});
    const auto plan = plan_combinations(3, 2, 100, rng);
    const auto set = filter_and_assemble(synthesize_candidates(flow, d.rows, plan), plan, nullptr, d.rows);
    const auto path = std::filesystem::temp_directory_path() / "mechxfer_test_augment.csv";
    write_augmented_csv(set, {"x1", "y"}, path);
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    CHECK(line == "x1,y,i1,i2,kept,origin");
    int lines = 0, kept = 0;
    while (std::getline(is, line)) {
        ++lines;
        kept += line.find(",1,original") != std::string::npos || line.find(",1,synthetic") != std::string::npos;
    }
    CHECK(lines == 3 + 9);
    CHECK(kept == 9);
    std::filesystem::remove(path);
    CHECK_THROWS(write_augmented_csv(set, {"x1"}, path));
}
