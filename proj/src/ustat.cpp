#include "mechxfer/ustat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mechxfer {

namespace {

using boost::multiprecision::cpp_int;

// n^k, or cap + 1 once it exceeds cap.
std::size_t capped_power(std::size_t n, std::size_t k, std::size_t cap) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < k; ++i) {
        if (n != 0 && total > cap / n) return cap + 1;
        total *= n;
    }
    return total;
}

// Advances a base-n odometer; false after the last tuple.
bool next_tuple(std::vector<std::size_t>& t, std::size_t n) {
    for (std::size_t d = t.size(); d-- > 0;) {
        if (++t[d] < n) return true;
        t[d] = 0;
    }
    return false;
}

bool next_combination(std::vector<std::size_t>& c, std::size_t n) {
    const std::size_t j = c.size();
    for (std::size_t i = j; i-- > 0;) {
        if (c[i] < n - j + i) {
            ++c[i];
            for (std::size_t k = i + 1; k < j; ++k) c[k] = c[k - 1] + 1;
            return true;
        }
    }
    return false;
}

Matrix gather_rows(const Matrix& sample, const std::vector<std::size_t>& idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), sample.cols());
    for (std::size_t a = 0; a < idx.size(); ++a) out.row(Eigen::Index(a)) = sample.row(Eigen::Index(idx[a]));
    return out;
}

cpp_int binomial(std::size_t n, std::size_t k) {
    if (k > n) return 0;
    cpp_int r = 1;
    for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

struct Moments {
    double mean = 0.0, var = 0.0, se_mean = 0.0, se_var = 0.0;
};

Moments moments(const std::vector<double>& x) {
    const double m = double(x.size());
    Moments out;
    out.mean = std::accumulate(x.begin(), x.end(), 0.0) / m;
    double m2 = 0.0, m4 = 0.0;
    for (double v : x) {
        const double c = (v - out.mean) * (v - out.mean);
        m2 += c;
        m4 += c * c;
    }
    out.var = m2 / (m - 1.0);
    m4 /= m;
    out.se_mean = std::sqrt(out.var / m);
    out.se_var = std::sqrt(std::max(0.0, m4 - (m2 / m) * (m2 / m)) / m);
    return out;
}

double mean_loss(const PointLoss& loss, const Matrix& z) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) total += loss(z.row(i));
    return total / double(z.rows());
}

}  // namespace

Kernel symmetrized_kernel(const FlowParams& flow, PointLoss loss) {
    const std::size_t dim = flow.config.dim;
    return [flow, loss = std::move(loss), dim](const Matrix& args) {
        if (std::size_t(args.rows()) != dim || std::size_t(args.cols()) != dim)
            throw ShapeError("symmetrized kernel takes D arguments of width D");
        std::vector<std::size_t> perm(dim);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::vector<std::vector<double>> picks;
        do {
            std::vector<double> v(dim);
            for (std::size_t d = 0; d < dim; ++d) v[d] = args(Eigen::Index(perm[d]), Eigen::Index(d));
            picks.push_back(std::move(v));
        } while (std::next_permutation(perm.begin(), perm.end()));
        std::sort(picks.begin(), picks.end());
        Matrix s(static_cast<Eigen::Index>(picks.size()), static_cast<Eigen::Index>(dim));
        for (std::size_t r = 0; r < picks.size(); ++r)
            for (std::size_t d = 0; d < dim; ++d) s(Eigen::Index(r), Eigen::Index(d)) = picks[r][d];
        const Matrix z = synthesize(flow, s);
        std::vector<double> values;
        for (Eigen::Index r = 0; r < z.rows(); ++r) values.push_back(loss(z.row(r)));
        std::sort(values.begin(), values.end());
        return std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
    };
}

RiskEstimate v_statistic_risk(const FlowParams& flow, const PointLoss& loss, const Matrix& ics) {
    const auto n = std::size_t(ics.rows()), dim = std::size_t(ics.cols());
    if (n < 1) throw std::invalid_argument("V-statistic needs n >= 1");
    const std::size_t total = capped_power(n, dim, kVStatisticCap);
    if (total > kVStatisticCap) throw std::length_error("V-statistic over n^D > 10^7 tuples is not enumerated");
    constexpr std::size_t chunk = 4096;
    std::vector<std::size_t> t(dim, 0);
    double sum = 0.0;
    for (std::size_t done = 0; done < total;) {
        const std::size_t rows = std::min(chunk, total - done);
        Matrix s(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t d = 0; d < dim; ++d) s(Eigen::Index(r), Eigen::Index(d)) = ics(Eigen::Index(t[d]), Eigen::Index(d));
            next_tuple(t, n);
        }
        const Matrix z = synthesize(flow, s);
        for (Eigen::Index r = 0; r < z.rows(); ++r) sum += loss(z.row(r));
        done += rows;
    }
    return {sum / double(total), RiskKind::v_statistic, n, dim};
}

RiskEstimate empirical_risk(const PointLoss& loss, const Matrix& z) {
    if (z.rows() < 1) throw std::invalid_argument("empirical risk needs at least one row");
    return {mean_loss(loss, z), RiskKind::empirical, std::size_t(z.rows()), std::size_t(z.cols())};
}

double v_statistic(const Kernel& kernel, const Matrix& sample, std::size_t degree) {
    const auto n = std::size_t(sample.rows());
    if (n < 1 || degree < 1) throw std::invalid_argument("V-statistic needs n >= 1 and degree >= 1");
    const std::size_t total = capped_power(n, degree, kVStatisticCap);
    if (total > kVStatisticCap) throw std::length_error("V-statistic over more than 10^7 tuples is not enumerated");
    std::vector<std::size_t> t(degree, 0);
    double sum = 0.0;
    do sum += kernel(gather_rows(sample, t));
    while (next_tuple(t, n));
    return sum / double(total);
}

double u_statistic(const Kernel& kernel, const Matrix& sample, std::size_t j) {
    const auto n = std::size_t(sample.rows());
    if (j < 1) throw std::invalid_argument("U-statistic degree must be >= 1");
    if (n < j) throw std::invalid_argument("U-statistic of degree " + std::to_string(j) + " needs at least " +
                                           std::to_string(j) + " rows, got " + std::to_string(n));
    std::vector<std::size_t> c(j);
    std::iota(c.begin(), c.end(), std::size_t{0});
    double sum = 0.0;
    std::size_t count = 0;
    do {
        sum += kernel(gather_rows(sample, c));
        ++count;
    } while (next_combination(c, n));
    return sum / double(count);
}

Rational DecompositionWeights::sum() const {
    Rational s = 0;
    for (const auto& w : exact) s += w;
    return s;
}

cpp_int surjection_count(std::size_t dim, std::size_t j) {
    cpp_int total = 0;
    for (std::size_t i = 0; i <= j; ++i) {
        const cpp_int term = binomial(j, i) * boost::multiprecision::pow(cpp_int(j - i), unsigned(dim));
        total += (i % 2 == 0) ? term : cpp_int(-term);
    }
    return total;
}

DecompositionWeights decomposition_weights(std::size_t n, std::size_t dim) {
    if (dim < 1) throw std::invalid_argument("decomposition needs D >= 1");
    if (n < dim) throw std::invalid_argument("decomposition needs n >= D (n = " + std::to_string(n) +
                                             ", D = " + std::to_string(dim) + ")");
    DecompositionWeights w{n, dim, {}, {}};
    const cpp_int denom = boost::multiprecision::pow(cpp_int(n), unsigned(dim));
    for (std::size_t j = 1; j <= dim; ++j) {
        w.exact.emplace_back(surjection_count(dim, j) * binomial(n, j), denom);
        w.value.push_back(w.exact.back().convert_to<double>());
    }
    return w;
}

Kernel v_to_u_kernel(const Kernel& kernel, std::size_t dim, std::size_t j) {
    if (j < 1 || j > dim) throw std::invalid_argument("v_to_u_kernel needs 1 <= j <= D");
    std::vector<std::vector<std::size_t>> maps;
    std::vector<std::size_t> tau(dim, 0);
    do {
        std::vector<bool> hit(j, false);
        for (auto v : tau) hit[v] = true;
        if (std::all_of(hit.begin(), hit.end(), [](bool b) { return b; })) maps.push_back(tau);
    } while (next_tuple(tau, j));
    return [kernel, maps, j](const Matrix& args) {
        if (std::size_t(args.rows()) != j) throw ShapeError("v_to_u kernel called with the wrong argument count");
        double sum = 0.0;
        for (const auto& m : maps) sum += kernel(gather_rows(args, m));
        return sum / double(maps.size());
    };
}

double verify_v_decomposition(const Kernel& kernel, const Matrix& sample, std::size_t dim,
                              const WeightFormula& weights) {
    const auto n = std::size_t(sample.rows());
    if (capped_power(n, dim, 1000000) > 1000000) throw std::length_error("decomposition check needs n^D <= 10^6");
    const auto w = decomposition_weights(n, dim);
    const std::vector<double> wv = weights ? weights(n, dim) : w.value;
    if (wv.size() != dim) throw std::invalid_argument("weight formula must return D weights");
    const double v = v_statistic(kernel, sample, dim);
    double rhs = 0.0;
    for (std::size_t j = 1; j <= dim; ++j) rhs += wv[j - 1] * u_statistic(v_to_u_kernel(kernel, dim, j), sample, j);
    return std::abs(v - rhs);
}

double UmvueReport::se_var_difference() const {
    return std::hypot(se_var_v, se_var_plain);
}

bool UmvueReport::unbiased_within(double k) const {
    return std::abs(mean_v - reference) < k * std::hypot(se_mean_v, se_reference) &&
           std::abs(mean_plain - reference) < k * std::hypot(se_mean_plain, se_reference);
}

bool UmvueReport::variance_ordered(double k) const {
    return var_plain - var_v > k * se_var_difference();
}

UmvueReport mc_umvue_check(const IcSampler& sampler, const FlowParams& flow, const PointLoss& loss, std::size_t n,
                           std::size_t reps, std::uint64_t seed, std::size_t reference_draws) {
    if (reps < 1000) throw std::invalid_argument("Monte Carlo check needs at least 1000 repetitions");
    if (n < 1) throw std::invalid_argument("Monte Carlo check needs n >= 1");
    if (reference_draws < 2) throw std::invalid_argument("reference needs at least 2 draws");
    UmvueReport rep;
    rep.n = n;
    rep.dim = flow.config.dim;
    rep.reps = reps;
    rep.reference_draws = reference_draws;

    std::vector<double> v(reps), plain(reps);
    for (std::size_t r = 0; r < reps; ++r) {
        Rng rng(derive_seed(seed, "umvue", r));
        const Matrix s = sampler(n, rng);
        if (std::size_t(s.rows()) != n || std::size_t(s.cols()) != rep.dim)
            throw ShapeError("IC sampler returned the wrong shape");
        v[r] = v_statistic_risk(flow, loss, s).value;
        plain[r] = mean_loss(loss, synthesize(flow, s));
    }
    const Moments mv = moments(v), mp = moments(plain);
    rep.mean_v = mv.mean;
    rep.var_v = mv.var;
    rep.se_mean_v = mv.se_mean;
    rep.se_var_v = mv.se_var;
    rep.mean_plain = mp.mean;
    rep.var_plain = mp.var;
    rep.se_mean_plain = mp.se_mean;
    rep.se_var_plain = mp.se_var;

    Rng rng(derive_seed(seed, "umvue-reference"));
    double sum = 0.0, sq = 0.0;
    for (std::size_t done = 0; done < reference_draws;) {
        const std::size_t rows = std::min<std::size_t>(100000, reference_draws - done);
        const Matrix z = synthesize(flow, sampler(rows, rng));
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
            const double l = loss(z.row(i));
            sum += l;
            sq += l * l;
        }
        done += rows;
    }
    const double m = double(reference_draws);
    rep.reference = sum / m;
    rep.se_reference = std::sqrt(std::max(0.0, sq / m - rep.reference * rep.reference) / (m - 1.0));
    return rep;
}

ExactCheck exact_expectation_check(const std::vector<DiscreteMarginal>& marginals, const FlowParams& flow,
                                   const PointLoss& loss, std::size_t n) {
    const std::size_t dim = marginals.size();
    if (dim != flow.config.dim) throw std::invalid_argument("one marginal per flow dimension is required");
    if (n < 1) throw std::invalid_argument("exact check needs n >= 1");
    std::size_t grid = 1;
    std::vector<std::size_t> stride(dim);
    for (std::size_t d = dim; d-- > 0;) {
        const auto& m = marginals[d];
        if (m.support.empty() || m.support.size() != m.probs.size())
            throw std::invalid_argument("marginal " + std::to_string(d) + " needs matching support and probabilities");
        double total = 0.0;
        for (double p : m.probs) {
            if (!(p >= 0.0)) throw std::invalid_argument("probabilities must be nonnegative");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("probabilities must sum to 1");
        stride[d] = grid;
        grid *= m.support.size();
    }
    const std::size_t outcomes = capped_power(grid, n, kVStatisticCap);
    if (outcomes > kVStatisticCap) throw std::length_error("exact enumeration over more than 10^7 samples");

    // Loss and probability of every single-point outcome.
    Matrix points(static_cast<Eigen::Index>(grid), static_cast<Eigen::Index>(dim));
    std::vector<double> prob(grid, 1.0);
    for (std::size_t c = 0; c < grid; ++c)
        for (std::size_t d = 0; d < dim; ++d) {
            const std::size_t digit = (c / stride[d]) % marginals[d].support.size();
            points(Eigen::Index(c), Eigen::Index(d)) = marginals[d].support[digit];
            prob[c] *= marginals[d].probs[digit];
        }
    const Matrix z = synthesize(flow, points);
    std::vector<double> table(grid);
    for (std::size_t c = 0; c < grid; ++c) table[c] = loss(z.row(Eigen::Index(c)));

    ExactCheck out;
    out.outcomes = outcomes;
    for (std::size_t c = 0; c < grid; ++c) out.risk += prob[c] * table[c];

    const std::size_t tuples = capped_power(n, dim, kVStatisticCap);
    std::vector<std::size_t> sample(n, 0);
    do {
        double w = 1.0;
        for (auto c : sample) w *= prob[c];
        double v = 0.0;
        std::vector<std::size_t> t(dim, 0);
        do {
            std::size_t code = 0;
            for (std::size_t d = 0; d < dim; ++d) code += ((sample[t[d]] / stride[d]) % marginals[d].support.size()) * stride[d];
            v += table[code];
        } while (next_tuple(t, n));
        out.expected_v += w * v / double(tuples);
    } while (next_tuple(sample, grid));
    out.difference = std::abs(out.expected_v - out.risk);
    return out;
}

nlohmann::json to_json(const UmvueReport& r) {
    return {{"n", r.n},
            {"D", r.dim},
            {"reps", r.reps},
            {"reference_draws", r.reference_draws},
            {"mean_v_statistic", r.mean_v},
            {"mean_empirical", r.mean_plain},
            {"var_v_statistic", r.var_v},
            {"var_empirical", r.var_plain},
            {"reference_risk", r.reference},
            {"se_reference", r.se_reference},
            {"se_mean_v_statistic", r.se_mean_v},
            {"se_mean_empirical", r.se_mean_plain},
            {"se_var_v_statistic", r.se_var_v},
            {"se_var_empirical", r.se_var_plain},
            {"se_var_difference", r.se_var_difference()},
            {"unbiased_3se", r.unbiased_within(3.0)},
            {"variance_ordered_3se", r.variance_ordered(3.0)}};
}

nlohmann::json to_json(const ExactCheck& c) {
    return {{"expected_v_statistic", c.expected_v}, {"risk", c.risk}, {"difference", c.difference},
            {"outcomes", c.outcomes}};
}

nlohmann::json to_json(const DecompositionWeights& w) {
    nlohmann::json exact = nlohmann::json::array();
    for (const auto& q : w.exact) exact.push_back(q.str());
    return {{"n", w.n}, {"D", w.dim}, {"weights", exact}, {"weights_real", w.value}, {"sum", w.sum().str()}};
}

}  // namespace mechxfer
