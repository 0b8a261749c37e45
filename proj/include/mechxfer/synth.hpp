#pragma once

// Synthetic benchmarks with a known mixing: independent components drawn per
// domain from a product of Gaussian or Laplace marginals, then pushed
// through a fixed invertible flow.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mechxfer/dataset.hpp"
#include "mechxfer/flow.hpp"
#include "mechxfer/random.hpp"

namespace mechxfer {

enum class IcKind { gaussian, laplace };

std::string to_string(IcKind kind);
// Throws std::invalid_argument naming `field` for unknown kinds.
IcKind parse_ic_kind(const std::string& text, const std::string& field = "kind");

struct IcMarginal {
    IcKind kind = IcKind::gaussian;
    double location = 0.0;
    double scale = 1.0;  // standard deviation for gaussian, b for laplace
};

// marginals[k][d] is the law of component d in domain k.
struct IcFamily {
    std::vector<std::vector<IcMarginal>> marginals;

    std::size_t domains() const noexcept { return marginals.size(); }
    std::size_t dim() const noexcept { return marginals.empty() ? 0 : marginals.front().size(); }
    void validate() const;
};

struct SampledDomain {
    DomainDataset data;
    Matrix ics;  // n x D, the components behind data.rows
};

// Rows s ~ prod_d q_{k,d}, z = synthesize(mixing, s). Columns are named
// x1..x{D-1}, y.
SampledDomain sample_domain(const IcFamily& family, const FlowParams& mixing, std::size_t k, std::size_t n,
                            std::uint64_t seed);

struct VariabilityReport {
    std::size_t rank = 0;
    Vector singular_values;
};

// Rank of the rows w(s|u_j) - w(s|u_0), j >= 1, where w stacks the first and
// second derivatives of log q_d(s_d|u) over d. Singular values below
// 1e-8 * max count as zero.
VariabilityReport variability_rank(const IcFamily& family, const Vector& s, const std::vector<std::size_t>& domains);

// Mean absolute Spearman correlation under the best column matching.
double mcc(const Matrix& true_ics, const Matrix& est_ics);

struct SynthConfig {
    std::size_t dim = 2;
    std::size_t source_domains = 5;
    std::size_t samples_per_domain = 1000;
    std::size_t target_samples = 1000;
    IcKind kind = IcKind::gaussian;
    std::size_t mixing_depth = 4;
    std::size_t mixing_hidden = 16;
    double mixing_gain = 1.0;  // coupling weights are multiplied by this before clipping
    double location_range = 2.0;        // locations ~ U(-r, r)
    double scale_min = 0.5, scale_max = 2.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticBenchmark {
    IcFamily family;  // sources first, target last
    FlowParams mixing;
    std::vector<SampledDomain> sources;
    SampledDomain target;
};

// Marginal parameters are redrawn until the sources pass the variability
// check at full rank 2D.
SyntheticBenchmark make_benchmark(const SynthConfig& config);

// Random flow whose coupling weights are scaled by `gain` and clipped to
// [-1, 1].
FlowParams random_mixing(std::size_t dim, std::size_t depth, std::size_t hidden, std::uint64_t seed,
                         double gain = 1.0);

// One CSV per domain (domain,x1,..,y) plus ground_truth.json with the family
// and mixing. Returns the written paths.
std::vector<std::filesystem::path> write_benchmark(const SyntheticBenchmark& bench, const std::filesystem::path& dir);

}  // namespace mechxfer
