#include "doctest.h"
#include "mechxfer/theory.hpp"

using namespace mechxfer;

namespace {

TheoryOptions quick() {
    TheoryOptions o;
    o.kernels_per_case = 2;
    o.exact_configs = 3;
    o.mc_reps = 4000;
    o.mc_reference_draws = 200000;
    return o;
}

}  // namespace

TEST_CASE("theory suite passes and its report conforms") {
    const auto o = quick();
    const auto r = run_theory_suite(o);
    for (const auto& c : r.checks) {
        CAPTURE(c.name);
        CAPTURE(c.detail.dump());
        CHECK(c.passed);
    }
    const auto j = r.to_json(o);
    CHECK(validate_theory_report(j).empty());
    CHECK(nlohmann::json::parse(j.dump()) == j);

    auto broken = j;
    broken["checks"][0].erase("passed");
    CHECK_FALSE(validate_theory_report(broken).empty());
    broken = j;
    broken["passed"] = !j["passed"].get<bool>();
    CHECK_FALSE(validate_theory_report(broken).empty());
    broken = j;
    broken["checks"][3]["detail"].erase("var_empirical");
    CHECK(validate_theory_report(broken).size() == 1);
    CHECK_FALSE(validate_theory_report(nlohmann::json::array()).empty());
}

TEST_CASE("injected weights break the decomposition") {
    auto o = quick();
    // Uniform weights still sum to one but are wrong.
    o.weights = [](std::size_t, std::size_t dim) { return std::vector<double>(dim, 1.0 / double(dim)); };
    const auto c = check_v_decomposition(o);
    CHECK_FALSE(c.passed);
    CHECK(c.detail["max_residual"].get<double>() > 1e-6);
    o.weights = [](std::size_t, std::size_t) { return std::vector<double>{1.0}; };
    CHECK_THROWS(check_v_decomposition(o));
}

TEST_CASE("bounded loss") {
    RowVector z(2);
    z << 1.0, 1.0;
    CHECK(bounded_label_loss()(z) == 0.0);
    z << 0.0, 1e6;
    CHECK(bounded_label_loss()(z) < 1.0);
    CHECK(bounded_label_loss()(z) > 0.999);
}
