#include "mechxfer/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "mechxfer/synth.hpp"

namespace mechxfer {

namespace {

Matrix gaussian_sample(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix m(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

}  // namespace

Kernel random_symmetric_kernel(std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> c(dim * 3);
    for (auto& v : c) v = g(rng);
    return [c, dim](const Matrix& args) {
        std::vector<std::size_t> p(dim);
        std::iota(p.begin(), p.end(), std::size_t{0});
        double total = 0.0;
        do {
            double h = 0.0;
            for (std::size_t a = 0; a < dim; ++a) {
                const double x = args.row(Eigen::Index(p[a])).sum();
                h += c[3 * a] * x + c[3 * a + 1] * std::sin(x * double(a + 1)) + c[3 * a + 2] * x * x;
            }
            total += h * h;
        } while (std::next_permutation(p.begin(), p.end()));
        return total;
    };
}

PointLoss bounded_label_loss(double slope) {
    return [slope](const Eigen::Ref<const RowVector>& z) {
        const double r = z(z.size() - 1) - slope * z(0);
        return r * r / (1.0 + r * r);
    };
}

bool TheoryReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const TheoryCheck& c) { return c.passed; });
}

nlohmann::json TheoryReport::to_json(const TheoryOptions& options) const {
    nlohmann::json j;
    j["schema"] = "mechxfer.verify-theory/1";
    j["seed"] = options.seed;
    j["weights_injected"] = bool(options.weights);
    j["passed"] = passed();
    j["checks"] = nlohmann::json::array();
    for (const auto& c : checks) j["checks"].push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    return j;
}

TheoryCheck check_v_decomposition(const TheoryOptions& options) {
    TheoryCheck out{"v_decomposition", true, {}};
    double worst = 0.0;
    nlohmann::json cases = nlohmann::json::array();
    for (std::size_t n : {3, 4, 5})
        for (std::size_t dim : {2, 3})
            for (std::size_t k = 0; k < options.kernels_per_case; ++k) {
                const std::uint64_t s = derive_seed(options.seed, "theory-kernel", (n * 10 + dim) * 1000 + k);
                const auto kernel = random_symmetric_kernel(dim, s);
                const Matrix sample = gaussian_sample(Eigen::Index(n), 2, derive_seed(s, "sample"));
                double r = verify_v_decomposition(kernel, sample, dim, options.weights);
                if (!std::isfinite(r)) r = std::numeric_limits<double>::infinity();
                worst = std::max(worst, r);
                cases.push_back({{"n", n}, {"dim", dim}, {"kernel", k}, {"residual", r}});
            }
    out.passed = worst < kDecompositionTolerance;
    out.detail = {{"tolerance", kDecompositionTolerance}, {"max_residual", worst}, {"cases", cases}};
    return out;
}

TheoryCheck check_weight_sums() {
    TheoryCheck out{"weight_sums", true, {}};
    std::size_t checked = 0, failed = 0;
    for (std::size_t dim = 1; dim <= 6; ++dim)
        for (std::size_t n = dim; n <= 50; ++n) {
            ++checked;
            if (decomposition_weights(n, dim).sum() != 1) ++failed;
        }
    out.passed = failed == 0;
    out.detail = {{"max_n", 50}, {"max_dim", 6}, {"checked", checked}, {"failed", failed}};
    return out;
}

TheoryCheck check_exact_unbiasedness(const TheoryOptions& options) {
    TheoryCheck out{"exact_unbiasedness", true, {}};
    double worst = 0.0;
    nlohmann::json configs = nlohmann::json::array();
    for (std::size_t c = 0; c < options.exact_configs; ++c) {
        Rng rng(derive_seed(options.seed, "theory-exact", c));
        std::normal_distribution<double> g(0.0, 1.0);
        std::uniform_real_distribution<double> u(0.05, 0.95);
        std::vector<DiscreteMarginal> q(2);
        for (auto& m : q) {
            const double p = u(rng);
            m.support = {g(rng), g(rng)};
            m.probs = {p, 1.0 - p};
        }
        const double slope = g(rng), offset = g(rng);
        const PointLoss loss = [slope, offset](const Eigen::Ref<const RowVector>& z) {
            const double r = z(1) - slope * z(0) - offset;
            return r * r;
        };
        const auto flow = random_mixing(2, 2, 8, derive_seed(options.seed, "theory-exact-flow", c));
        const auto r = exact_expectation_check(q, flow, loss, 2);
        worst = std::max(worst, std::isfinite(r.difference) ? r.difference : std::numeric_limits<double>::infinity());
        configs.push_back(to_json(r));
    }
    out.passed = worst < kExactTolerance;
    out.detail = {{"tolerance", kExactTolerance}, {"n", 2}, {"dim", 2}, {"max_difference", worst}, {"configs", configs}};
    return out;
}

TheoryCheck check_variance_ordering(const TheoryOptions& options) {
    TheoryCheck out{"variance_ordering", true, {}};
    const auto flow = random_mixing(2, 4, 16, derive_seed(options.seed, "theory-mc-flow"));
    const IcSampler sampler = [](std::size_t n, Rng& rng) {
        std::normal_distribution<double> g(0.0, 1.0);
        Matrix s(static_cast<Eigen::Index>(n), 2);
        for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = g(rng);
        return s;
    };
    const auto rep = mc_umvue_check(sampler, flow, bounded_label_loss(), options.mc_n, options.mc_reps,
                                    derive_seed(options.seed, "theory-mc"), options.mc_reference_draws);
    const bool ordered = rep.variance_ordered(kMonteCarloSigmas);
    const bool unbiased = rep.unbiased_within(kMonteCarloSigmas);
    out.passed = ordered && unbiased;
    out.detail = to_json(rep);
    out.detail["sigmas"] = kMonteCarloSigmas;
    out.detail["variance_ordered"] = ordered;
    out.detail["unbiased"] = unbiased;
    return out;
}

TheoryReport run_theory_suite(const TheoryOptions& options) {
    TheoryReport r;
    r.checks.push_back(check_v_decomposition(options));
    r.checks.push_back(check_weight_sums());
    r.checks.push_back(check_exact_unbiasedness(options));
    r.checks.push_back(check_variance_ordering(options));
    return r;
}

std::vector<std::string> validate_theory_report(const nlohmann::json& report) {
    std::vector<std::string> problems;
    auto need = [&](const nlohmann::json& obj, const char* key, auto pred, const char* what, const std::string& at) {
        if (!obj.is_object() || !obj.contains(key) || !pred(obj[key])) {
            problems.push_back(at + key + " must be " + what);
            return false;
        }
        return true;
    };
    const auto is_bool = [](const nlohmann::json& v) { return v.is_boolean(); };
    const auto is_number = [](const nlohmann::json& v) { return v.is_number(); };
    need(report, "schema", [](const nlohmann::json& v) { return v == "mechxfer.verify-theory/1"; },
         "\"mechxfer.verify-theory/1\"", "");
    need(report, "seed", [](const nlohmann::json& v) { return v.is_number_unsigned(); }, "an unsigned integer", "");
    need(report, "weights_injected", is_bool, "a boolean", "");
    need(report, "passed", is_bool, "a boolean", "");
    if (!need(report, "checks", [](const nlohmann::json& v) { return v.is_array(); }, "an array", "")) return problems;

    const std::vector<std::pair<std::string, std::vector<const char*>>> expected{
        {"v_decomposition", {"tolerance", "max_residual"}},
        {"weight_sums", {"checked", "failed"}},
        {"exact_unbiasedness", {"tolerance", "max_difference"}},
        {"variance_ordering", {"var_v_statistic", "var_empirical", "mean_v_statistic", "mean_empirical", "reference_risk", "se_var_difference"}}};
    const auto& checks = report["checks"];
    if (checks.size() != expected.size()) problems.push_back("checks must hold " + std::to_string(expected.size()) + " entries");
    bool all = true;
    for (std::size_t i = 0; i < std::min(checks.size(), expected.size()); ++i) {
        const std::string at = "checks[" + std::to_string(i) + "].";
        const auto& c = checks[i];
        need(c, "name", [&](const nlohmann::json& v) { return v == expected[i].first; }, expected[i].first.c_str(), at);
        if (need(c, "passed", is_bool, "a boolean", at)) all = all && c["passed"].get<bool>();
        if (need(c, "detail", [](const nlohmann::json& v) { return v.is_object(); }, "an object", at))
            for (const char* key : expected[i].second) need(c["detail"], key, is_number, "a number", at + "detail.");
    }
    if (report.contains("passed") && report["passed"].is_boolean() && report["passed"].get<bool>() != all)
        problems.push_back("passed must equal the conjunction of the checks");
    return problems;
}

}  // namespace mechxfer
