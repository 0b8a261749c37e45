#pragma once

// Numerical checks of the estimator theory bundled as one report: the
// V-to-U decomposition, exact unbiasedness by enumeration and the Monte
// Carlo variance ordering.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "mechxfer/ustat.hpp"

namespace mechxfer {

// Symmetric kernel of `dim` arguments: the sum over argument permutations of
// a squared random smooth function of the row sums.
Kernel random_symmetric_kernel(std::size_t dim, std::uint64_t seed);

// Bounded squared-error style loss r^2 / (1 + r^2), r = y - slope * x1.
PointLoss bounded_label_loss(double slope = 1.0);

struct TheoryOptions {
    std::uint64_t seed = 0;
    std::size_t kernels_per_case = 10;
    std::size_t exact_configs = 10;
    std::size_t mc_reps = 20000;
    std::size_t mc_n = 5;
    std::size_t mc_reference_draws = 1000000;
    WeightFormula weights;  // replaces the exact decomposition weights when set
};

struct TheoryCheck {
    std::string name;
    bool passed = false;
    nlohmann::json detail;
};

struct TheoryReport {
    std::vector<TheoryCheck> checks;
    bool passed() const;
    nlohmann::json to_json(const TheoryOptions& options) const;
};

inline constexpr double kDecompositionTolerance = 1e-10;
inline constexpr double kExactTolerance = 1e-12;
inline constexpr double kMonteCarloSigmas = 3.0;

TheoryCheck check_v_decomposition(const TheoryOptions& options);
// Exact rational weight sums for n <= 50, D <= 6.
TheoryCheck check_weight_sums();
TheoryCheck check_exact_unbiasedness(const TheoryOptions& options);
TheoryCheck check_variance_ordering(const TheoryOptions& options);

TheoryReport run_theory_suite(const TheoryOptions& options);

// Problems found when checking a report against the documented layout;
// empty when it conforms.
std::vector<std::string> validate_theory_report(const nlohmann::json& report);

}  // namespace mechxfer
