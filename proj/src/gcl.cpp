#include "mechxfer/gcl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "mechxfer/optim.hpp"

namespace mechxfer {

namespace {

std::string psi_name(std::size_t d) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "psi.d%02zu.", d);
    return buf;
}

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor t = Tensor::zeros(rows, cols);
    for (double& v : t.data()) v = u(rng);
    return t;
}

}  // namespace

void GclTrainConfig::validate() const {
    flow.validate();
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (max_epochs == 0 || batch_size == 0 || psi_hidden == 0 || eval_every == 0)
        throw std::invalid_argument("epochs, batch size, psi width and evaluation interval must be positive");
    if (max_epochs % eval_every != 0)
        throw std::invalid_argument("evaluation interval must divide the epoch count");
    if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be >= 0");
}

GclModel init_gcl_model(const FlowConfig& flow, std::size_t domains, std::size_t psi_hidden, std::uint64_t seed,
                        const std::optional<Matrix>& init_batch) {
    if (domains < 2) throw std::invalid_argument("contrastive learning needs at least 2 domains");
    GclModel m;
    m.flow = init_flow(flow, derive_seed(seed, "flow-init"), init_batch);
    m.domains = domains;
    Rng rng(derive_seed(seed, "psi-init"));
    const double b1 = 1.0;  // sqrt(1 / 1 input)
    const double b2 = std::sqrt(1.0 / double(psi_hidden));
    for (std::size_t d = 0; d < flow.dim; ++d) {
        PsiNet p;
        p.w1 = uniform_tensor(1, psi_hidden, b1, rng);
        p.b1 = uniform_tensor(1, psi_hidden, b1, rng);
        p.w2 = uniform_tensor(psi_hidden, domains, b2, rng);
        p.b2 = uniform_tensor(1, domains, b2, rng);
        m.psi.push_back(std::move(p));
    }
    return m;
}

Matrix classifier_scores(const GclModel& model, const Matrix& z) {
    const Matrix s = analyze(model.flow, z);
    Matrix out = Matrix::Zero(z.rows(), Eigen::Index(model.domains));
    for (std::size_t d = 0; d < model.psi.size(); ++d) {
        const PsiNet& p = model.psi[d];
        Matrix h = (s.col(Eigen::Index(d)) * p.w1.mat()).rowwise() + p.b1.mat().row(0);
        h = h.cwiseMax(0.0);
        out += (h * p.w2.mat()).rowwise() + p.b2.mat().row(0);
    }
    return out;
}

double classifier_score(const GclModel& model, const Vector& z, std::size_t u) {
    if (u >= model.domains)
        throw std::out_of_range("domain index " + std::to_string(u) + " out of range for " +
                                std::to_string(model.domains) + " domains");
    Matrix row = z.transpose();
    return classifier_scores(model, row)(0, Eigen::Index(u));
}

std::vector<std::size_t> draw_negative_domains(std::span<const std::size_t> domains, std::size_t K, Rng& rng) {
    if (K < 2) throw std::invalid_argument("negative sampling needs at least 2 domains");
    std::uniform_int_distribution<std::size_t> pick(0, K - 2);
    std::vector<std::size_t> out(domains.size());
    for (std::size_t i = 0; i < domains.size(); ++i) {
        if (domains[i] >= K) throw std::out_of_range("domain index out of range");
        const std::size_t r = pick(rng);
        out[i] = r >= domains[i] ? r + 1 : r;
    }
    return out;
}

Var gcl_loss(const FlowConfig& flow, std::size_t K, const ParamVars& vars, Var z,
             std::span<const std::size_t> positive, std::span<const std::size_t> negative) {
    using namespace ad;
    if (K < 2) throw std::invalid_argument("contrastive loss needs at least 2 domains");
    if (positive.empty()) throw std::invalid_argument("contrastive loss on an empty batch");
    if (positive.size() != negative.size() || positive.size() != z.value().rows())
        throw ShapeError("contrastive loss: batch, positive and negative labels differ in length");
    Var s = analyze(flow_vars(flow, vars), z);
    Var r_pos, r_neg;
    for (std::size_t d = 0; d < flow.dim; ++d) {
        const std::string n = psi_name(d);
        Var col = slice_cols(s, d, 1);
        Var h = relu(add_row(matmul(col, vars.at(n + "w1")), vars.at(n + "b1")));
        Var o = add_row(matmul(h, vars.at(n + "w2")), vars.at(n + "b2"));
        Var p = pick(o, positive);
        Var q = pick(o, negative);
        r_pos = d == 0 ? p : add(r_pos, p);
        r_neg = d == 0 ? q : add(r_neg, q);
    }
    // phi(r) + phi(-r') with phi(m) = softplus(-m)
    return mean(add(softplus(neg(r_pos)), softplus(r_neg)));
}

GradResult gcl_loss_and_grad(const GclModel& model, const Matrix& z, std::span<const std::size_t> positive,
                             std::span<const std::size_t> negative) {
    const Tensor zt = Tensor::from_matrix(z);
    const FlowConfig cfg = model.flow.config;
    const std::size_t K = model.domains;
    return evaluate_with_grad(
        [&](Tape& t, const ParamVars& v) { return gcl_loss(cfg, K, v, t.constant(zt), positive, negative); },
        gcl_param_set(model));
}

double gcl_loss(const GclModel& model, const Matrix& z, std::span<const std::size_t> domains, Rng& rng) {
    if (model.domains < 2) throw std::invalid_argument("contrastive loss needs at least 2 domains");
    const auto negative = draw_negative_domains(domains, model.domains, rng);
    const Matrix scores = classifier_scores(model, z);
    if (domains.empty()) throw std::invalid_argument("contrastive loss on an empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < domains.size(); ++i) {
        const auto r = Eigen::Index(i);
        total += logistic_loss(scores(r, Eigen::Index(domains[i]))) +
                 logistic_loss(-scores(r, Eigen::Index(negative[i])));
    }
    return total / double(domains.size());
}

ParamSet gcl_param_set(const GclModel& model) {
    ParamSet out = flow_param_set(model.flow, "flow.");
    for (std::size_t d = 0; d < model.psi.size(); ++d) {
        const std::string n = psi_name(d);
        out.emplace(n + "w1", model.psi[d].w1);
        out.emplace(n + "b1", model.psi[d].b1);
        out.emplace(n + "w2", model.psi[d].w2);
        out.emplace(n + "b2", model.psi[d].b2);
    }
    return out;
}

GclModel gcl_from_param_set(const GclModel& shape, const ParamSet& set) {
    GclModel m;
    m.domains = shape.domains;
    m.flow = flow_from_param_set(shape.flow.config, set, "flow.");
    for (std::size_t d = 0; d < shape.psi.size(); ++d) {
        const std::string n = psi_name(d);
        m.psi.push_back({set.at(n + "w1"), set.at(n + "b1"), set.at(n + "w2"), set.at(n + "b2")});
    }
    return m;
}

bool gcl_decays(const std::string& name) {
    if (name.rfind("flow.actnorm.", 0) == 0) return false;
    return !(name.rfind("flow.", 0) == 0 && name.size() >= 7 && name.compare(name.size() - 7, 7, ".mixing") == 0);
}

void GclTrainingLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write training log " + path.string());
    os << "epoch,loss,snapshot_score\n";
    std::size_t next = 0;
    os.precision(17);
    for (std::size_t e = 0; e < epoch_loss.size(); ++e) {
        os << e + 1 << ',' << epoch_loss[e] << ',';
        if (next < snapshots.size() && snapshots[next].epoch == e + 1) os << snapshots[next++].score;
        os << '\n';
    }
}

GclTrainResult train_gcl(std::span<const DomainDataset> sources, const GclTrainConfig& config,
                         const SnapshotScore& snapshot_score) {
    config.validate();
    const std::size_t K = sources.size();
    if (K < 2) throw std::invalid_argument("contrastive learning needs at least 2 source domains");
    for (const auto& s : sources) {
        s.validate();
        if (s.dim() != config.flow.dim)
            throw std::invalid_argument("source domain '" + s.id + "' has dimension " + std::to_string(s.dim()) +
                                        ", flow expects " + std::to_string(config.flow.dim));
    }

    const Matrix pooled = pool_rows(sources);
    std::vector<std::size_t> label;
    for (std::size_t k = 0; k < K; ++k) label.insert(label.end(), sources[k].size(), k);

    GclModel shape = init_gcl_model(config.flow, K, config.psi_hidden, config.seed, pooled);
    ParamSet params = gcl_param_set(shape);
    AdamState adam;
    adam.lr = config.lr;

    Rng rng(derive_seed(config.seed, "gcl-batches"));
    std::vector<std::size_t> order(label.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    GclTrainResult result;
    double best = std::numeric_limits<double>::infinity();
    bool have_best = false;
    const std::size_t n = order.size();
    const auto D = Eigen::Index(config.flow.dim);

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_total = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_index) {
            const std::size_t len = std::min(config.batch_size, n - start);
            Tensor zb = Tensor::zeros(len, config.flow.dim);
            std::vector<std::size_t> pos(len);
            for (std::size_t i = 0; i < len; ++i) {
                const std::size_t row = order[start + i];
                zb.mat().row(Eigen::Index(i)) = pooled.row(Eigen::Index(row)).head(D);
                pos[i] = label[row];
            }
            const auto neg = draw_negative_domains(pos, K, rng);
            GradResult g;
            try {
                g = evaluate_with_grad(
                    [&](Tape& t, const ParamVars& v) { return gcl_loss(config.flow, K, v, t.constant(zb), pos, neg); },
                    params);
            } catch (const NonFiniteError& e) {
                throw GclTrainingError(e.what(), epoch, batch_index);
            }
            if (!std::isfinite(g.value)) throw GclTrainingError("non-finite contrastive loss", epoch, batch_index);
            epoch_total += g.value * double(len);
            weight_decay(params, g.gradients, config.weight_decay, gcl_decays);
            adam_step(params, g.gradients, adam);
        }
        const double epoch_loss = epoch_total / double(n);
        result.log.epoch_loss.push_back(epoch_loss);

        if (epoch % config.eval_every == 0) {
            GclModel snapshot = gcl_from_param_set(shape, params);
            const double score = snapshot_score ? snapshot_score(snapshot, epoch) : epoch_loss;
            result.log.snapshots.push_back({epoch, score});
            if (!have_best || score < best) {
                best = score;
                have_best = true;
                result.best = std::move(snapshot);
                result.log.best_snapshot = result.log.snapshots.size() - 1;
            }
        }
    }
    if (!have_best) {
        // Every snapshot scored NaN.
        result.best = gcl_from_param_set(shape, params);
        result.log.best_snapshot = result.log.snapshots.size() - 1;
    }
    return result;
}

}  // namespace mechxfer
