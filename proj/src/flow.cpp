#include "mechxfer/flow.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "mechxfer/random.hpp"
#include "mechxfer/serialization.hpp"

namespace mechxfer {

namespace {

std::string block_name(const std::string& prefix, std::size_t b) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "block%02zu.", b);
    return prefix + buf;
}

Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    std::normal_distribution<double> n(0.0, stddev);
    Tensor t = Tensor::zeros(rows, cols);
    for (double& v : t.data()) v = n(rng);
    return t;
}

// Dense layer in x out: weights and biases drawn from N(0, 1/m), m = in*out + out.
void init_layer(Tensor& w, Tensor& b, std::size_t in, std::size_t out, Rng& rng) {
    const double sd = std::sqrt(1.0 / double(in * out + out));
    w = normal_tensor(in, out, sd, rng);
    b = normal_tensor(1, out, sd, rng);
}

Tensor random_orthogonal(std::size_t d, Rng& rng) {
    Matrix g = normal_tensor(d, d, 1.0, rng).to_matrix();
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    // Sign fix makes the draw Haar-distributed.
    for (std::size_t j = 0; j < d; ++j)
        if (r(Eigen::Index(j), Eigen::Index(j)) < 0.0) q.col(Eigen::Index(j)) *= -1.0;
    return Tensor::from_matrix(q);
}

void require_rows_dim(const FlowParams& params, const Matrix& m, const char* what) {
    if (std::size_t(m.cols()) != params.config.dim)
        throw ShapeError(std::string(what) + ": expected " + std::to_string(params.config.dim) + " columns, got " +
                         std::to_string(m.cols()));
    if (!m.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

struct CouplingTerms {
    Matrix scale;  // tanh(.) + 1
    Matrix shift;
};

CouplingTerms coupling_terms(const CouplingNet& net, const Matrix& x1) {
    Matrix h = (x1 * net.w_in.mat()).rowwise() + net.b_in.mat().row(0);
    h = h.cwiseMax(0.0);
    CouplingTerms out;
    out.scale = ((h * net.w_scale.mat()).rowwise() + net.b_scale.mat().row(0)).array().tanh() + 1.0;
    out.shift = (h * net.w_shift.mat()).rowwise() + net.b_shift.mat().row(0);
    return out;
}

}  // namespace

void FlowConfig::validate() const {
    if (dim < 2) throw std::invalid_argument("flow dimension must be >= 2");
    if (depth < 1) throw std::invalid_argument("flow depth must be >= 1");
    if (coupling_hidden < 1) throw std::invalid_argument("coupling hidden width must be >= 1");
}

FlowParams identity_flow(const FlowConfig& config) {
    config.validate();
    const std::size_t d = config.dim, d1 = config.split_first(), d2 = config.split_second(), h = config.coupling_hidden;
    FlowParams p;
    p.config = config;
    p.actnorm_scale = Tensor({1, d}, 1.0);
    p.actnorm_bias = Tensor::zeros(1, d);
    for (std::size_t b = 0; b < config.depth; ++b) {
        FlowBlock blk;
        blk.mixing = Tensor::from_matrix(Matrix::Identity(Eigen::Index(d), Eigen::Index(d)));
        blk.coupling = {Tensor::zeros(d1, h), Tensor::zeros(1, h), Tensor::zeros(h, d2),
                        Tensor::zeros(1, d2),  Tensor::zeros(h, d2), Tensor::zeros(1, d2)};
        p.blocks.push_back(std::move(blk));
    }
    return p;
}

FlowParams init_flow(const FlowConfig& config, std::uint64_t seed, const std::optional<Matrix>& init_batch) {
    FlowParams p = identity_flow(config);
    Rng rng(seed);
    const std::size_t d = config.dim, d1 = config.split_first(), d2 = config.split_second(), h = config.coupling_hidden;
    for (auto& blk : p.blocks) {
        blk.mixing = random_orthogonal(d, rng);
        auto& c = blk.coupling;
        init_layer(c.w_in, c.b_in, d1, h, rng);
        init_layer(c.w_scale, c.b_scale, h, d2, rng);
        init_layer(c.w_shift, c.b_shift, h, d2, rng);
    }
    if (init_batch) {
        const Matrix& z = *init_batch;
        if (std::size_t(z.cols()) != d) throw ShapeError("init_flow: init batch has wrong column count");
        if (z.rows() < 2) throw std::invalid_argument("init_flow: init batch needs at least 2 rows");
        if (!z.allFinite()) throw std::invalid_argument("init_flow: init batch contains non-finite values");
        const RowVector mean = z.colwise().mean();
        const RowVector var = (z.rowwise() - mean).array().square().colwise().mean();
        for (std::size_t j = 0; j < d; ++j) {
            if (!(var(Eigen::Index(j)) > 0.0))
                throw std::invalid_argument("init_flow: init batch has zero variance in dimension " +
                                            std::to_string(j));
            const double s = 1.0 / std::sqrt(var(Eigen::Index(j)));
            p.actnorm_scale(0, j) = s;
            p.actnorm_bias(0, j) = -mean(Eigen::Index(j)) * s;
        }
    }
    return p;
}

void validate_flow(const FlowParams& p) {
    p.config.validate();
    const std::size_t d = p.config.dim, d1 = p.config.split_first(), d2 = p.config.split_second(),
                      h = p.config.coupling_hidden;
    auto expect = [](const Tensor& t, std::size_t r, std::size_t c, const std::string& name) {
        if (t.rows() != r || t.cols() != c || t.size() != r * c)
            throw ShapeError("flow parameter " + name + " has shape " + t.shape_string() + ", expected (" +
                             std::to_string(r) + ", " + std::to_string(c) + ")");
        if (!t.all_finite()) throw std::invalid_argument("flow parameter " + name + " is not finite");
    };
    expect(p.actnorm_scale, 1, d, "actnorm.scale");
    expect(p.actnorm_bias, 1, d, "actnorm.bias");
    for (double s : p.actnorm_scale.data())
        if (s == 0.0) throw SingularFlowError("actnorm scale has a zero entry");
    if (p.blocks.size() != p.config.depth) throw ShapeError("flow block count does not match depth");
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        const auto& blk = p.blocks[b];
        const std::string n = "block" + std::to_string(b);
        expect(blk.mixing, d, d, n + ".mixing");
        expect(blk.coupling.w_in, d1, h, n + ".w_in");
        expect(blk.coupling.b_in, 1, h, n + ".b_in");
        expect(blk.coupling.w_scale, h, d2, n + ".w_scale");
        expect(blk.coupling.b_scale, 1, d2, n + ".b_scale");
        expect(blk.coupling.w_shift, h, d2, n + ".w_shift");
        expect(blk.coupling.b_shift, 1, d2, n + ".b_shift");
        const double det = blk.mixing.mat().determinant();
        if (!(std::abs(det) >= kSingularDeterminant))
            throw SingularFlowError("mixing matrix of " + n + " is singular (|det| = " + std::to_string(std::abs(det)) +
                                    ")");
    }
}

// ---------------------------------------------------------------------------
// Tape path (analysis direction)

FlowVars flow_vars(const FlowConfig& config, const ParamVars& vars, const std::string& prefix) {
    FlowVars f;
    f.config = config;
    f.actnorm_scale = vars.at(prefix + "actnorm.scale");
    f.actnorm_bias = vars.at(prefix + "actnorm.bias");
    for (std::size_t b = 0; b < config.depth; ++b) {
        const std::string n = block_name(prefix, b);
        f.blocks.push_back({vars.at(n + "mixing"), vars.at(n + "w_in"), vars.at(n + "b_in"), vars.at(n + "w_scale"),
                            vars.at(n + "b_scale"), vars.at(n + "w_shift"), vars.at(n + "b_shift")});
    }
    return f;
}

FlowVars flow_constants(Tape& tape, const FlowParams& p) {
    FlowVars f;
    f.config = p.config;
    f.actnorm_scale = tape.constant(p.actnorm_scale);
    f.actnorm_bias = tape.constant(p.actnorm_bias);
    for (const auto& blk : p.blocks) {
        const auto& c = blk.coupling;
        f.blocks.push_back({tape.constant(blk.mixing), tape.constant(c.w_in), tape.constant(c.b_in),
                            tape.constant(c.w_scale), tape.constant(c.b_scale), tape.constant(c.w_shift),
                            tape.constant(c.b_shift)});
    }
    return f;
}

Var analyze(const FlowVars& f, Var z) {
    using namespace ad;
    const std::size_t d1 = f.config.split_first(), d2 = f.config.split_second();
    Var x = add_row(mul_row(z, f.actnorm_scale), f.actnorm_bias);
    for (const auto& blk : f.blocks) {
        x = matmul(x, blk.mixing);
        Var x1 = slice_cols(x, 0, d1);
        Var x2 = slice_cols(x, d1, d2);
        Var h = relu(add_row(matmul(x1, blk.w_in), blk.b_in));
        Var sc = add_scalar(tanh(add_row(matmul(h, blk.w_scale), blk.b_scale)), 1.0);
        Var sh = add_row(matmul(h, blk.w_shift), blk.b_shift);
        x = concat_cols(x1, add(mul(sc, x2), sh));
    }
    return x;
}

// ---------------------------------------------------------------------------
// Plain path

Matrix actnorm_forward(const FlowParams& p, const Matrix& z) {
    require_rows_dim(p, z, "actnorm_forward");
    Matrix out = z.array().rowwise() * p.actnorm_scale.mat().row(0).array();
    out.rowwise() += p.actnorm_bias.mat().row(0);
    return out;
}

Matrix coupling_forward(const FlowConfig& config, const CouplingNet& net, const Matrix& x) {
    const auto d1 = Eigen::Index(config.split_first()), d2 = Eigen::Index(config.split_second());
    Matrix x1 = x.leftCols(d1);
    CouplingTerms t = coupling_terms(net, x1);
    Matrix out(x.rows(), x.cols());
    out.leftCols(d1) = x1;
    out.rightCols(d2) = t.scale.cwiseProduct(x.rightCols(d2)) + t.shift;
    return out;
}

Matrix analyze(const FlowParams& p, const Matrix& z) {
    require_rows_dim(p, z, "analyze");
    Matrix x = actnorm_forward(p, z);
    for (const auto& blk : p.blocks) {
        Matrix y = x * blk.mixing.mat();
        x = coupling_forward(p.config, blk.coupling, y);
    }
    if (!x.allFinite()) throw std::invalid_argument("analyze: non-finite output");
    return x;
}

Vector analyze(const FlowParams& p, const Vector& z) {
    Matrix row = z.transpose();
    return analyze(p, row).row(0).transpose();
}

Matrix synthesize(const FlowParams& p, const Matrix& s) {
    require_rows_dim(p, s, "synthesize");
    const auto d1 = Eigen::Index(p.config.split_first()), d2 = Eigen::Index(p.config.split_second());
    Matrix x = s;
    for (auto it = p.blocks.rbegin(); it != p.blocks.rend(); ++it) {
        const Matrix y1 = x.leftCols(d1);
        CouplingTerms t = coupling_terms(it->coupling, y1);
        x.rightCols(d2) = (x.rightCols(d2) - t.shift).cwiseQuotient(t.scale);
        const Matrix w = it->mixing.mat();
        Eigen::PartialPivLU<Matrix> lu(w.transpose());
        if (!(std::abs(lu.determinant()) >= kSingularDeterminant))
            throw SingularFlowError("synthesize: singular mixing matrix");
        // x_prev * W = x  <=>  W^T x_prev^T = x^T
        x = lu.solve(Matrix(x.transpose())).transpose();
    }
    for (double sc : p.actnorm_scale.data())
        if (sc == 0.0) throw SingularFlowError("synthesize: zero actnorm scale");
    x.rowwise() -= p.actnorm_bias.mat().row(0);
    x = x.array().rowwise() / p.actnorm_scale.mat().row(0).array();
    return x;
}

Vector synthesize(const FlowParams& p, const Vector& s) {
    Matrix row = s.transpose();
    return synthesize(p, row).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Parameter sets and files

ParamSet flow_param_set(const FlowParams& p, const std::string& prefix) {
    ParamSet out;
    out.emplace(prefix + "actnorm.scale", p.actnorm_scale);
    out.emplace(prefix + "actnorm.bias", p.actnorm_bias);
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        const std::string n = block_name(prefix, b);
        const auto& blk = p.blocks[b];
        out.emplace(n + "mixing", blk.mixing);
        out.emplace(n + "w_in", blk.coupling.w_in);
        out.emplace(n + "b_in", blk.coupling.b_in);
        out.emplace(n + "w_scale", blk.coupling.w_scale);
        out.emplace(n + "b_scale", blk.coupling.b_scale);
        out.emplace(n + "w_shift", blk.coupling.w_shift);
        out.emplace(n + "b_shift", blk.coupling.b_shift);
    }
    return out;
}

FlowParams flow_from_param_set(const FlowConfig& config, const ParamSet& set, const std::string& prefix) {
    config.validate();
    FlowParams p;
    p.config = config;
    p.actnorm_scale = set.at(prefix + "actnorm.scale");
    p.actnorm_bias = set.at(prefix + "actnorm.bias");
    for (std::size_t b = 0; b < config.depth; ++b) {
        const std::string n = block_name(prefix, b);
        FlowBlock blk;
        blk.mixing = set.at(n + "mixing");
        blk.coupling = {set.at(n + "w_in"),    set.at(n + "b_in"),    set.at(n + "w_scale"),
                        set.at(n + "b_scale"), set.at(n + "w_shift"), set.at(n + "b_shift")};
        p.blocks.push_back(std::move(blk));
    }
    return p;
}

nlohmann::json flow_to_json(const FlowParams& params) {
    nlohmann::json j;
    j["format"] = "mechxfer-flow";
    j["version"] = 1;
    j["config"] = {{"dim", params.config.dim},
                   {"depth", params.config.depth},
                   {"coupling_hidden", params.config.coupling_hidden}};
    j["params"] = param_set_to_json(flow_param_set(params, ""));
    return j;
}

FlowParams flow_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "mechxfer-flow") throw std::runtime_error("not a flow document");
    if (j.value("version", 0) != 1) throw std::runtime_error("unsupported flow file version");
    FlowConfig cfg;
    cfg.dim = j.at("config").at("dim").get<std::size_t>();
    cfg.depth = j.at("config").at("depth").get<std::size_t>();
    cfg.coupling_hidden = j.at("config").at("coupling_hidden").get<std::size_t>();
    FlowParams p = flow_from_param_set(cfg, param_set_from_json(j.at("params")), "");
    validate_flow(p);
    return p;
}

void save_flow(const FlowParams& params, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write flow file " + path.string());
    os << flow_to_json(params).dump(1) << '\n';
}

FlowParams load_flow(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read flow file " + path.string());
    try {
        return flow_from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace mechxfer
