#include "mechxfer/augment.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>

namespace mechxfer {

namespace {

// n^D, saturating at max size_t.
std::size_t tuple_count(std::size_t n, std::size_t dim) {
    std::size_t total = 1;
    for (std::size_t d = 0; d < dim; ++d) {
        if (total > std::numeric_limits<std::size_t>::max() / n) return std::numeric_limits<std::size_t>::max();
        total *= n;
    }
    return total;
}

std::vector<std::size_t> decode(std::size_t code, std::size_t n, std::size_t dim) {
    std::vector<std::size_t> t(dim);
    for (std::size_t d = dim; d-- > 0;) {
        t[d] = code % n;
        code /= n;
    }
    return t;
}

}  // namespace

bool is_diagonal(const std::vector<std::size_t>& tuple) noexcept {
    return std::adjacent_find(tuple.begin(), tuple.end(), std::not_equal_to<>()) == tuple.end();
}

Matrix extract_ics(const FlowParams& flow, const DomainDataset& target) {
    if (target.size() == 0) throw std::invalid_argument("target domain is empty");
    return analyze(flow, target.rows);
}

CombinationPlan plan_combinations(std::size_t n, std::size_t dim, std::size_t budget, Rng& rng) {
    if (n < 1) throw std::invalid_argument("combination plan needs n >= 1");
    if (dim < 2) throw std::invalid_argument("combination plan needs D >= 2");
    if (budget < n) throw std::invalid_argument("combination budget " + std::to_string(budget) +
                                                " is below the " + std::to_string(n) + " diagonal tuples");
    CombinationPlan plan{n, dim, {}, false};
    const std::size_t total = tuple_count(n, dim);
    if (total <= budget) {
        plan.exhaustive = true;
        plan.indices.reserve(total);
        for (std::size_t c = 0; c < total; ++c) plan.indices.push_back(decode(c, n, dim));
        return plan;
    }
    for (std::size_t i = 0; i < n; ++i) plan.indices.emplace_back(dim, i);
    std::set<std::vector<std::size_t>> seen(plan.indices.begin(), plan.indices.end());
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (plan.indices.size() < budget) {
        std::vector<std::size_t> t(dim);
        for (auto& v : t) v = pick(rng);
        if (seen.insert(t).second) plan.indices.push_back(std::move(t));
    }
    return plan;
}

Matrix synthesize_candidates(const FlowParams& flow, const Matrix& ics, const CombinationPlan& plan) {
    const auto dim = ics.cols();
    if (std::size_t(dim) != plan.dim) throw ShapeError("IC width differs from the combination plan");
    Matrix s(static_cast<Eigen::Index>(plan.indices.size()), dim);
    for (std::size_t t = 0; t < plan.indices.size(); ++t) {
        const auto& tuple = plan.indices[t];
        if (tuple.size() != plan.dim) throw ShapeError("combination tuple has the wrong length");
        for (Eigen::Index d = 0; d < dim; ++d) {
            if (Eigen::Index(tuple[std::size_t(d)]) >= ics.rows()) throw std::out_of_range("combination index out of range");
            s(Eigen::Index(t), d) = ics(Eigen::Index(tuple[std::size_t(d)]), d);
        }
    }
    return synthesize(flow, s);
}

std::size_t AugmentedSet::kept_synthetic() const {
    return std::size_t(std::count(kept.begin(), kept.end(), true));
}

double AugmentedSet::inlier_fraction() const {
    if (inlier.empty()) return 0.0;
    return double(std::count(inlier.begin(), inlier.end(), true)) / double(inlier.size());
}

Matrix AugmentedSet::training_rows() const {
    Matrix out(originals.rows() + Eigen::Index(kept_synthetic()), originals.cols());
    out.topRows(originals.rows()) = originals;
    Eigen::Index r = originals.rows();
    for (std::size_t t = 0; t < kept.size(); ++t)
        if (kept[t]) out.row(r++) = candidates.row(Eigen::Index(t));
    return out;
}

std::vector<std::vector<std::size_t>> AugmentedSet::training_provenance() const {
    std::vector<std::vector<std::size_t>> out;
    for (Eigen::Index i = 0; i < originals.rows(); ++i) out.emplace_back(std::size_t(originals.cols()), std::size_t(i));
    for (std::size_t t = 0; t < kept.size(); ++t)
        if (kept[t]) out.push_back(tuples[t]);
    return out;
}

AugmentedSet filter_and_assemble(const Matrix& candidates, const CombinationPlan& plan, const OcsvmModel* filter,
                                 const Matrix& originals) {
    if (std::size_t(candidates.rows()) != plan.indices.size())
        throw ShapeError("candidate count differs from the combination plan");
    if (candidates.cols() != originals.cols()) throw ShapeError("candidates and originals differ in width");
    AugmentedSet set;
    set.originals = originals;
    set.candidates = candidates;
    set.tuples = plan.indices;
    set.inlier.resize(plan.indices.size());
    set.kept.resize(plan.indices.size());
    for (std::size_t t = 0; t < plan.indices.size(); ++t) {
        set.inlier[t] = filter == nullptr || is_inlier(*filter, candidates.row(Eigen::Index(t))).inlier;
        set.kept[t] = set.inlier[t] && !is_diagonal(plan.indices[t]);
    }
    return set;
}

void write_augmented_csv(const AugmentedSet& set, const std::vector<std::string>& columns,
                         const std::filesystem::path& path) {
    const auto dim = std::size_t(set.originals.cols());
    if (columns.size() != dim) throw std::invalid_argument("need one column name per dimension");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    for (const auto& c : columns) os << c << ',';
    for (std::size_t d = 0; d < dim; ++d) os << 'i' << d + 1 << ',';
    os << "kept,origin\n";
    char buf[40];
    auto row = [&](const auto& values, const std::vector<std::size_t>& tuple, bool kept, const char* origin) {
        for (Eigen::Index j = 0; j < values.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", values(j));
            os << buf << ',';
        }
        for (auto i : tuple) os << i << ',';
        os << (kept ? 1 : 0) << ',' << origin << '\n';
    };
    for (Eigen::Index i = 0; i < set.originals.rows(); ++i)
        row(set.originals.row(i), std::vector<std::size_t>(dim, std::size_t(i)), true, "original");
    for (std::size_t t = 0; t < set.tuples.size(); ++t)
        row(set.candidates.row(Eigen::Index(t)), set.tuples[t], set.kept[t], "synthetic");
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace mechxfer
