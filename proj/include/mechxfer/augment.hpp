#pragma once

// Recombination of estimated independent components: every tuple
// (i_1, ..., i_D) of target indices yields the synthetic point
// synthesize(s_{i_1,1}, ..., s_{i_D,D}).

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "mechxfer/dataset.hpp"
#include "mechxfer/flow.hpp"
#include "mechxfer/ocsvm.hpp"
#include "mechxfer/random.hpp"

namespace mechxfer {

inline constexpr std::size_t kDefaultCombinationBudget = 100000;

// Indices are 0-based.
struct CombinationPlan {
    std::size_t n = 0;
    std::size_t dim = 0;
    std::vector<std::vector<std::size_t>> indices;
    bool exhaustive = false;
};

bool is_diagonal(const std::vector<std::size_t>& tuple) noexcept;

// Row i is analyze(z_i).
Matrix extract_ics(const FlowParams& flow, const DomainDataset& target);

// All n^D tuples in lexicographic order when n^D <= budget. Otherwise the n
// diagonal tuples followed by distinct uniform draws until `budget` tuples.
CombinationPlan plan_combinations(std::size_t n, std::size_t dim, std::size_t budget, Rng& rng);

// Row t is the synthesized point for plan.indices[t].
Matrix synthesize_candidates(const FlowParams& flow, const Matrix& ics, const CombinationPlan& plan);

struct AugmentedSet {
    Matrix originals;                               // n x D
    Matrix candidates;                              // one row per plan tuple
    std::vector<std::vector<std::size_t>> tuples;   // plan.indices
    std::vector<bool> inlier;                       // filter verdict per candidate
    std::vector<bool> kept;                         // inlier and not a diagonal copy

    std::size_t kept_synthetic() const;
    // Fraction of candidates accepted by the filter.
    double inlier_fraction() const;
    // Originals first (in order), then kept candidates in plan order.
    Matrix training_rows() const;
    // Tuple behind each row of training_rows(); originals get (i, ..., i).
    std::vector<std::vector<std::size_t>> training_provenance() const;
};

// Keeps every original. Candidates pass when the filter calls them inliers;
// with a null filter every candidate passes. Diagonal tuples are dropped in
// favour of the original they reproduce.
AugmentedSet filter_and_assemble(const Matrix& candidates, const CombinationPlan& plan, const OcsvmModel* filter,
                                 const Matrix& originals);

// Columns: the value columns, i1..iD, kept, origin ("original" or
// "synthetic"). Originals are listed first with their diagonal tuple.
void write_augmented_csv(const AugmentedSet& set, const std::vector<std::string>& columns,
                         const std::filesystem::path& path);

}  // namespace mechxfer
