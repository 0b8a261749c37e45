#pragma once

// V- and U-statistics of the recombination risk estimate, the identity
// writing a V-statistic as a weighted sum of U-statistics, and harnesses that
// check unbiasedness and variance ordering numerically.

#include <cstdint>
#include <functional>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "json.hpp"

#include "mechxfer/flow.hpp"
#include "mechxfer/random.hpp"

namespace mechxfer {

// Loss of a fixed predictor at a data point z in R^D.
using PointLoss = std::function<double(const Eigen::Ref<const RowVector>& z)>;

// Kernel of j arguments; row a of `args` is argument a.
using Kernel = std::function<double(const Matrix& args)>;

// (1/D!) sum over permutations pi of loss(synthesize(s_{pi(1),1}, ...,
// s_{pi(D),D})). The D! terms are summed after sorting, so permuting the
// arguments gives a bit-identical value.
Kernel symmetrized_kernel(const FlowParams& flow, PointLoss loss);

enum class RiskKind { empirical, v_statistic, generalized_u };

struct RiskEstimate {
    double value = 0.0;
    RiskKind kind = RiskKind::empirical;
    std::size_t n = 0;
    std::size_t dim = 0;
};

inline constexpr std::size_t kVStatisticCap = 10000000;

// Mean of loss(synthesize(s_{i_1,1}, ..., s_{i_D,D})) over all n^D tuples,
// tuples in lexicographic order. Throws when n^D > 10^7.
RiskEstimate v_statistic_risk(const FlowParams& flow, const PointLoss& loss, const Matrix& ics);

// Mean of loss over the rows of z.
RiskEstimate empirical_risk(const PointLoss& loss, const Matrix& z);

// Mean of kernel over all degree-tuples of rows (with repetition).
double v_statistic(const Kernel& kernel, const Matrix& sample, std::size_t degree);

// Mean of a symmetric kernel over all size-j subsets of rows.
double u_statistic(const Kernel& kernel, const Matrix& sample, std::size_t j);

using Rational = boost::multiprecision::cpp_rational;

struct DecompositionWeights {
    std::size_t n = 0;
    std::size_t dim = 0;
    std::vector<Rational> exact;  // exact[j - 1] = w_j
    std::vector<double> value;

    Rational sum() const;
};

// Number of surjections from a D-set onto a j-set.
boost::multiprecision::cpp_int surjection_count(std::size_t dim, std::size_t j);

// w_j = surj(D, j) C(n, j) / n^D for j = 1..D. Needs n >= D >= 1.
DecompositionWeights decomposition_weights(std::size_t n, std::size_t dim);

// psi_j(s_1..s_j): mean of kernel(s_tau(1), ..., s_tau(D)) over surjections
// tau: [D] -> [j].
Kernel v_to_u_kernel(const Kernel& kernel, std::size_t dim, std::size_t j);

// Weights w_1..w_D for a given (n, D).
using WeightFormula = std::function<std::vector<double>(std::size_t n, std::size_t dim)>;

// |V_n - sum_j w_j U_n(psi_j)| for a symmetric kernel of `dim` arguments.
// Needs n >= D and n^D <= 10^6. `weights` replaces the exact weights.
double verify_v_decomposition(const Kernel& kernel, const Matrix& sample, std::size_t dim,
                              const WeightFormula& weights = nullptr);

// Draws n independent rows of independent components.
using IcSampler = std::function<Matrix(std::size_t n, Rng& rng)>;

struct UmvueReport {
    std::size_t n = 0, dim = 0, reps = 0, reference_draws = 0;
    double mean_v = 0.0, mean_plain = 0.0;
    double var_v = 0.0, var_plain = 0.0;
    double reference = 0.0;
    double se_reference = 0.0;
    double se_mean_v = 0.0, se_mean_plain = 0.0;
    double se_var_v = 0.0, se_var_plain = 0.0;

    // sqrt(se_var_v^2 + se_var_plain^2).
    double se_var_difference() const;
    bool unbiased_within(double k) const;
    bool variance_ordered(double k) const;
};

// Per repetition: s ~ sampler(n), z = synthesize(flow, s); records the
// V-statistic risk of s and the plain mean loss over z. Standard errors of
// the variances use the fourth central moment.
UmvueReport mc_umvue_check(const IcSampler& sampler, const FlowParams& flow, const PointLoss& loss, std::size_t n,
                           std::size_t reps, std::uint64_t seed, std::size_t reference_draws = 1000000);

struct DiscreteMarginal {
    std::vector<double> support;
    std::vector<double> probs;
};

struct ExactCheck {
    double expected_v = 0.0;
    double risk = 0.0;
    double difference = 0.0;
    std::size_t outcomes = 0;
};

// Enumerates every sample of n points with independent coordinates drawn
// from `marginals` and compares E[V-statistic risk] with the true risk.
// Needs prod_d |support_d|^n <= 10^7.
ExactCheck exact_expectation_check(const std::vector<DiscreteMarginal>& marginals, const FlowParams& flow,
                                   const PointLoss& loss, std::size_t n);

nlohmann::json to_json(const UmvueReport& report);
nlohmann::json to_json(const ExactCheck& check);
nlohmann::json to_json(const DecompositionWeights& weights);

}  // namespace mechxfer
