#include "mechxfer/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace mechxfer {

std::string to_string(IcKind kind) {
    return kind == IcKind::gaussian ? "gaussian" : "laplace";
}

IcKind parse_ic_kind(const std::string& text, const std::string& field) {
    if (text == "gaussian") return IcKind::gaussian;
    if (text == "laplace") return IcKind::laplace;
    throw std::invalid_argument(field + ": unknown distribution kind '" + text + "' (expected gaussian or laplace)");
}

void IcFamily::validate() const {
    if (marginals.empty()) throw std::invalid_argument("IC family has no domains");
    const std::size_t D = marginals.front().size();
    if (D == 0) throw std::invalid_argument("IC family has no dimensions");
    for (const auto& dom : marginals) {
        if (dom.size() != D) throw std::invalid_argument("IC family domains differ in dimension");
        for (const auto& m : dom)
            if (!(m.scale > 0.0) || !std::isfinite(m.location) || !std::isfinite(m.scale))
                throw std::invalid_argument("IC marginal needs finite location and positive scale");
    }
}

SampledDomain sample_domain(const IcFamily& family, const FlowParams& mixing, std::size_t k, std::size_t n,
                            std::uint64_t seed) {
    family.validate();
    if (k >= family.domains()) throw std::out_of_range("domain index out of range");
    if (n == 0) throw std::invalid_argument("sample size must be positive");
    const std::size_t D = family.dim();
    if (mixing.config.dim != D) throw std::invalid_argument("mixing dimension differs from the IC family");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::exponential_distribution<double> expo(1.0);
    Matrix s(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(D));
    for (Eigen::Index i = 0; i < s.rows(); ++i)
        for (std::size_t d = 0; d < D; ++d) {
            const IcMarginal& m = family.marginals[k][d];
            const double e = m.kind == IcKind::gaussian ? normal(rng) : expo(rng) - expo(rng);
            s(i, Eigen::Index(d)) = m.location + m.scale * e;
        }
    SampledDomain out;
    out.data.rows = synthesize(mixing, s);
    out.ics = std::move(s);
    for (std::size_t d = 0; d + 1 < D; ++d) out.data.columns.push_back("x" + std::to_string(d + 1));
    out.data.columns.push_back("y");
    return out;
}

namespace {

// First and second derivative of log q at x.
std::pair<double, double> log_density_derivatives(const IcMarginal& m, double x) {
    if (m.kind == IcKind::gaussian) {
        const double v = m.scale * m.scale;
        return {-(x - m.location) / v, -1.0 / v};
    }
    if (x == m.location) throw std::domain_error("laplace log-density is not differentiable at its location");
    return {x > m.location ? -1.0 / m.scale : 1.0 / m.scale, 0.0};
}

Vector average_ranks(const Eigen::Ref<const Vector>& x) {
    const auto n = x.size();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x(a) < x(b); });
    Vector r(n);
    for (Eigen::Index i = 0; i < n;) {
        Eigen::Index j = i;
        while (j + 1 < n && x(idx[std::size_t(j + 1)]) == x(idx[std::size_t(i)])) ++j;
        const double avg = 0.5 * double(i + j) + 1.0;
        for (Eigen::Index t = i; t <= j; ++t) r(idx[std::size_t(t)]) = avg;
        i = j + 1;
    }
    return r;
}

double pearson(const Vector& a, const Vector& b) {
    const Vector ca = a.array() - a.mean();
    const Vector cb = b.array() - b.mean();
    const double den = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
    return den > 0.0 ? ca.dot(cb) / den : 0.0;
}

}  // namespace

VariabilityReport variability_rank(const IcFamily& family, const Vector& s, const std::vector<std::size_t>& domains) {
    family.validate();
    if (domains.size() < 2) throw std::invalid_argument("variability check needs at least 2 domains");
    const std::size_t D = family.dim();
    if (std::size_t(s.size()) != D) throw ShapeError("variability check: point dimension differs from the family");
    auto w = [&](std::size_t u) {
        if (u >= family.domains()) throw std::out_of_range("domain index out of range");
        Vector out(Eigen::Index(2 * D));
        for (std::size_t d = 0; d < D; ++d) {
            const auto [first, second] = log_density_derivatives(family.marginals[u][d], s(Eigen::Index(d)));
            out(Eigen::Index(d)) = first;
            out(Eigen::Index(D + d)) = second;
        }
        return out;
    };
    const Vector w0 = w(domains.front());
    Matrix diffs(Eigen::Index(domains.size() - 1), Eigen::Index(2 * D));
    for (std::size_t j = 1; j < domains.size(); ++j) diffs.row(Eigen::Index(j - 1)) = (w(domains[j]) - w0).transpose();

    VariabilityReport rep;
    Eigen::JacobiSVD<Matrix> svd(diffs);
    rep.singular_values = svd.singularValues();
    const double top = rep.singular_values.size() ? rep.singular_values.maxCoeff() : 0.0;
    if (top > 0.0)
        for (Eigen::Index i = 0; i < rep.singular_values.size(); ++i)
            if (rep.singular_values(i) > 1e-8 * top) ++rep.rank;
    return rep;
}

double mcc(const Matrix& true_ics, const Matrix& est_ics) {
    if (true_ics.rows() != est_ics.rows() || true_ics.cols() != est_ics.cols())
        throw ShapeError("mcc: true and estimated components differ in shape");
    if (true_ics.rows() < 3) throw std::invalid_argument("mcc needs at least 3 rows");
    const auto D = true_ics.cols();
    if (D > 8) throw std::invalid_argument("mcc: dimension above 8 makes the matching search too large");
    if (D < 1) throw std::invalid_argument("mcc needs at least one column");

    std::vector<Vector> rt, re;
    for (Eigen::Index d = 0; d < D; ++d) {
        rt.push_back(average_ranks(true_ics.col(d)));
        re.push_back(average_ranks(est_ics.col(d)));
    }
    Matrix corr(D, D);
    for (Eigen::Index a = 0; a < D; ++a)
        for (Eigen::Index b = 0; b < D; ++b) corr(a, b) = std::abs(pearson(rt[std::size_t(a)], re[std::size_t(b)]));

    std::vector<Eigen::Index> perm(static_cast<std::size_t>(D));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    double best = 0.0;
    do {
        double total = 0.0;
        for (Eigen::Index d = 0; d < D; ++d) total += corr(d, perm[std::size_t(d)]);
        best = std::max(best, total / double(D));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

void SynthConfig::validate() const {
    if (dim < 2) throw std::invalid_argument("synthetic dimension must be at least 2");
    if (source_domains < 2) throw std::invalid_argument("need at least 2 source domains");
    if (samples_per_domain == 0 || target_samples == 0) throw std::invalid_argument("sample sizes must be positive");
    if (mixing_depth == 0 || mixing_hidden == 0) throw std::invalid_argument("mixing depth and width must be positive");
    if (!(mixing_gain > 0.0)) throw std::invalid_argument("mixing gain must be positive");
    if (!(location_range >= 0.0)) throw std::invalid_argument("location range must be >= 0");
    if (!(scale_min > 0.0) || !(scale_max >= scale_min)) throw std::invalid_argument("need 0 < scale_min <= scale_max");
}

FlowParams random_mixing(std::size_t dim, std::size_t depth, std::size_t hidden, std::uint64_t seed,
                         double gain) {
    FlowParams p = init_flow(FlowConfig{dim, depth, hidden}, seed);
    auto clip = [gain](Tensor& t) {
        for (double& v : t.data()) v = std::clamp(gain * v, -1.0, 1.0);
    };
    for (auto& b : p.blocks) {
        clip(b.coupling.w_in);
        clip(b.coupling.b_in);
        clip(b.coupling.w_scale);
        clip(b.coupling.b_scale);
        clip(b.coupling.w_shift);
        clip(b.coupling.b_shift);
    }
    return p;
}

SyntheticBenchmark make_benchmark(const SynthConfig& config) {
    config.validate();
    const std::size_t D = config.dim;
    const std::size_t K = config.source_domains;
    const std::size_t full_rank = config.kind == IcKind::gaussian ? 2 * D : D;
    const std::size_t wanted = std::min(full_rank, K - 1);

    Rng rng(derive_seed(config.seed, "synth-family"));
    std::uniform_real_distribution<double> loc(-config.location_range, config.location_range);
    std::uniform_real_distribution<double> scl(config.scale_min, config.scale_max);
    std::normal_distribution<double> probe(0.0, 1.0);

    SyntheticBenchmark b;
    std::vector<std::size_t> sources(K);
    std::iota(sources.begin(), sources.end(), std::size_t{0});
    for (int attempt = 0;; ++attempt) {
        if (attempt == 1000) throw std::runtime_error("could not draw IC parameters passing the variability check");
        b.family.marginals.assign(K + 1, std::vector<IcMarginal>(D));
        for (auto& dom : b.family.marginals)
            for (auto& m : dom) m = {config.kind, loc(rng), scl(rng)};
        bool ok = true;
        for (int t = 0; t < 3 && ok; ++t) {
            Vector s(static_cast<Eigen::Index>(D));
            for (Eigen::Index d = 0; d < s.size(); ++d) s(d) = probe(rng);
            ok = variability_rank(b.family, s, sources).rank == wanted;
        }
        if (ok) break;
    }

    b.mixing = random_mixing(D, config.mixing_depth, config.mixing_hidden, derive_seed(config.seed, "synth-mixing"),
                             config.mixing_gain);
    for (std::size_t k = 0; k < K; ++k) {
        b.sources.push_back(sample_domain(b.family, b.mixing, k, config.samples_per_domain,
                                          derive_seed(config.seed, "synth-domain", k)));
        b.sources.back().data.id = "src" + std::to_string(k);
    }
    b.target = sample_domain(b.family, b.mixing, K, config.target_samples, derive_seed(config.seed, "synth-domain", K));
    b.target.data.id = "target";
    return b;
}

namespace {

void write_domain_csv(const DomainDataset& d, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "domain";
    for (const auto& c : d.columns) os << ',' << c;
    os << '\n';
    char buf[40];
    for (Eigen::Index i = 0; i < d.rows.rows(); ++i) {
        os << d.id;
        for (Eigen::Index j = 0; j < d.rows.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", d.rows(i, j));
            os << ',' << buf;
        }
        os << '\n';
    }
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

std::vector<std::filesystem::path> write_benchmark(const SyntheticBenchmark& bench, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> out;
    for (const auto& s : bench.sources) {
        out.push_back(dir / (s.data.id + ".csv"));
        write_domain_csv(s.data, out.back());
    }
    out.push_back(dir / (bench.target.data.id + ".csv"));
    write_domain_csv(bench.target.data, out.back());

    nlohmann::json fam = nlohmann::json::array();
    for (std::size_t k = 0; k < bench.family.domains(); ++k) {
        nlohmann::json dom = nlohmann::json::array();
        for (const auto& m : bench.family.marginals[k])
            dom.push_back({{"kind", to_string(m.kind)}, {"location", m.location}, {"scale", m.scale}});
        fam.push_back({{"domain", k < bench.sources.size() ? bench.sources[k].data.id : bench.target.data.id},
                       {"marginals", dom}});
    }
    nlohmann::json j{{"format", "mechxfer-ground-truth"}, {"version", 1}, {"family", fam},
                     {"mixing", flow_to_json(bench.mixing)}};
    out.push_back(dir / "ground_truth.json");
    std::ofstream os(out.back());
    if (!os) throw std::runtime_error("cannot write " + out.back().string());
    os << j.dump(1) << '\n';
    return out;
}

}  // namespace mechxfer
