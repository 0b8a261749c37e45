#pragma once

// Generalized contrastive learning over domain labels.
//
// The classifier r(z, u) = sum_d psi_d(analyze(z)_d)[u] is trained with the
// logistic loss to tell true (z, k) pairs from (z, k') pairs where k' is a
// uniformly drawn other domain. The flow part of the trained model is the
// mixing estimate.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mechxfer/autodiff.hpp"
#include "mechxfer/dataset.hpp"
#include "mechxfer/flow.hpp"
#include "mechxfer/random.hpp"

namespace mechxfer {

// One-hidden-layer ReLU network R -> R^K.
struct PsiNet {
    Tensor w1;  // 1 x h
    Tensor b1;  // 1 x h
    Tensor w2;  // h x K
    Tensor b2;  // 1 x K
};

struct GclModel {
    FlowParams flow;
    std::vector<PsiNet> psi;  // one per dimension
    std::size_t domains = 0;

    std::size_t dim() const noexcept { return flow.config.dim; }
};

struct GclTrainConfig {
    double lr = 1e-3;
    std::size_t max_epochs = 300;
    std::size_t batch_size = 32;
    double weight_decay = 1e-2;
    std::size_t psi_hidden = 10;
    std::size_t eval_every = 20;
    std::uint64_t seed = 0;
    FlowConfig flow;

    void validate() const;
};

class GclTrainingError : public std::runtime_error {
public:
    GclTrainingError(const std::string& what, std::size_t epoch, std::size_t batch)
        : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ")"),
          epoch_(epoch),
          batch_(batch) {}
    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batch() const noexcept { return batch_; }

private:
    std::size_t epoch_;
    std::size_t batch_;
};

// psi layers ~ U(-sqrt(1/m), sqrt(1/m)) with m the layer's input width.
GclModel init_gcl_model(const FlowConfig& flow, std::size_t domains, std::size_t psi_hidden, std::uint64_t seed,
                        const std::optional<Matrix>& init_batch = std::nullopt);

double classifier_score(const GclModel& model, const Vector& z, std::size_t u);
// Scores for every row of z against every domain, (n x K).
Matrix classifier_scores(const GclModel& model, const Matrix& z);

// k' ~ U([K] \ {k}) independently for each entry of `domains`.
std::vector<std::size_t> draw_negative_domains(std::span<const std::size_t> domains, std::size_t K, Rng& rng);

// Mean over rows of phi(r(z_i, k_i)) + phi(-r(z_i, k'_i)) with phi the
// logistic loss, as a tape program over named parameters.
Var gcl_loss(const FlowConfig& flow, std::size_t K, const ParamVars& vars, Var z,
             std::span<const std::size_t> positive, std::span<const std::size_t> negative);

// Loss of `model` on a batch, drawing negative domains from `rng`.
double gcl_loss(const GclModel& model, const Matrix& z, std::span<const std::size_t> domains, Rng& rng);

GradResult gcl_loss_and_grad(const GclModel& model, const Matrix& z, std::span<const std::size_t> positive,
                             std::span<const std::size_t> negative);

// Parameter names: "flow.*" (see flow_param_set) and "psi.dNN.{w1,b1,w2,b2}".
ParamSet gcl_param_set(const GclModel& model);
GclModel gcl_from_param_set(const GclModel& shape, const ParamSet& set);

// Weight decay applies to coupling nets and psi, not to actnorm or the
// invertible linear blocks.
bool gcl_decays(const std::string& name);

struct GclSnapshot {
    std::size_t epoch = 0;
    double score = 0.0;
};

struct GclTrainingLog {
    std::vector<double> epoch_loss;  // index e holds epoch e+1
    std::vector<GclSnapshot> snapshots;
    std::size_t best_snapshot = 0;

    // Rows: epoch,loss,snapshot_score (empty when no snapshot at that epoch).
    void write_csv(const std::filesystem::path& path) const;
};

struct GclTrainResult {
    GclModel best;
    GclTrainingLog log;
};

using SnapshotScore = std::function<double(const GclModel& model, std::size_t epoch)>;

// Minibatch Adam over the pooled (z, domain) pairs. Every eval_every epochs
// the current model is scored; the minimal-score snapshot (earliest on
// ties) is returned.
GclTrainResult train_gcl(std::span<const DomainDataset> sources, const GclTrainConfig& config,
                         const SnapshotScore& snapshot_score);

}  // namespace mechxfer
