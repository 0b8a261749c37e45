#pragma once

// Experiment harness: panel CSV ingestion, target splits, the recombination
// pipeline, naive baselines and the repeated-split evaluation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mechxfer/augment.hpp"
#include "mechxfer/dataset.hpp"
#include "mechxfer/gcl.hpp"
#include "mechxfer/ocsvm.hpp"
#include "mechxfer/ridge.hpp"

namespace mechxfer {

struct PanelSchema {
    std::string domain_column;
    std::vector<std::string> feature_columns;
    std::string label_column;
};

// COUNTRY; LINCOMEP, LRPMG, LCARPCAP; LGASPCAR.
PanelSchema gasoline_schema();
// domain; x1..x{D-1}; y (the layout written by the synthetic generator).
PanelSchema synthetic_schema(std::size_t dim);
// Gasoline schema when the header has COUNTRY, otherwise "domain" followed by
// feature columns with the last column as label.
PanelSchema infer_schema(const std::vector<std::string>& header);

std::vector<std::string> read_csv_header(const std::filesystem::path& path);

// One dataset per distinct domain value, in order of first appearance. Errors
// name the file line.
std::vector<DomainDataset> load_panel_csv(const std::filesystem::path& path, const PanelSchema& schema);

// Every *.csv in `dir` (sorted by name), schema inferred per file.
std::vector<DomainDataset> load_domain_dir(const std::filesystem::path& dir);

struct TargetSplit {
    DomainDataset train, test;
    std::vector<std::size_t> train_rows, test_rows;  // indices into the full target, ascending
};

// Train size round(fraction * n), uniform without replacement.
TargetSplit split_target(const DomainDataset& target, double fraction, std::uint64_t seed);
TargetSplit split_target_count(const DomainDataset& target, std::size_t train_size, std::uint64_t seed);

enum class Method { prop, tar_only, src_only, sand_tv, loo };

std::string to_string(Method m);
Method parse_method(const std::string& text);
std::vector<Method> parse_methods(const std::string& comma_list);
std::vector<Method> all_methods();

struct ExperimentConfig {
    std::string target;
    double train_fraction = 1.0 / 3.0;
    std::optional<std::size_t> train_size;  // overrides the fraction
    std::size_t repeats = 10;
    std::vector<Method> methods = all_methods();
    std::vector<std::size_t> psi_hidden_grid{10, 20};
    std::vector<double> weight_decay_grid{1e-2, 1e-1};
    GclTrainConfig gcl;  // lr, epochs, batch, eval interval and flow shape; dim is set from the data
    std::size_t budget = kDefaultCombinationBudget;
    double ocsvm_nu = 0.1;
    bool strict_loocv = false;  // hold out derived synthetic rows with their original
    std::optional<FlowParams> fixed_flow;  // skips GCL and uses this mixing estimate
    std::uint64_t seed = 0;
    std::size_t jobs = 1;

    void validate() const;
};

// Snapshots of one GCL training run on the sources.
struct GclCell {
    std::size_t psi_hidden = 0;
    double weight_decay = 0.0;
    std::vector<std::size_t> epochs;
    std::vector<FlowParams> flows;
    GclTrainingLog log;
    std::string error;  // non-empty when training failed
};

// One GCL training per (psi_hidden, weight_decay) cell. Cell c uses seed
// derive_seed(config.seed, "gcl", c). With fixed_flow set, a single cell
// holds that flow.
std::vector<GclCell> train_gcl_grid(std::span<const DomainDataset> sources, const ExperimentConfig& config);

// OCSVM on the pooled source rows with gamma = D.
OcsvmModel fit_source_filter(std::span<const DomainDataset> sources, double nu);

struct SnapshotFit {
    double loocv = 0.0;
    double lambda = 0.0;
    double gamma = 0.0;
    AugmentedSet augmented;
};

// Augment the target with `flow`, filter, and select lambda by leave-one-out
// over the original target rows.
SnapshotFit score_snapshot(const FlowParams& flow, const OcsvmModel& filter, const DomainDataset& target_train,
                           std::size_t budget, std::uint64_t plan_seed, bool strict);

struct AdaptDiagnostics {
    std::size_t cell = 0;
    std::size_t psi_hidden = 0;
    double weight_decay = 0.0;
    std::size_t epoch = 0;
    std::size_t candidates = 0;
    std::size_t augmented_size = 0;  // training rows including originals
    double kept_fraction = 0.0;      // candidates passing the filter
    double lambda = 0.0;
    double gamma = 0.0;
    double loocv = 0.0;
};

nlohmann::json to_json(const AdaptDiagnostics& d);

struct AdaptResult {
    KrrModel model;
    FlowParams flow;
    AdaptDiagnostics diagnostics;
};

// Scores every snapshot of every cell and refits the best (lowest LOOCV,
// earliest cell and epoch on ties).
AdaptResult adapt_with_snapshots(const std::vector<GclCell>& cells, const OcsvmModel& filter,
                                 const DomainDataset& target_train, const ExperimentConfig& config,
                                 std::uint64_t plan_seed);

// Full pipeline for one target training set: GCL grid, filter, selection.
AdaptResult pipeline_adapt(std::span<const DomainDataset> sources, const DomainDataset& target_train,
                           const ExperimentConfig& config);

struct BaselineResult {
    std::optional<KrrModel> model;  // absent for LOO
    LambdaSelection selection;
    double gamma = 0.0;
    Vector loo_predictions;         // LOO only, one per target row
};

BaselineResult run_baseline(Method method, std::span<const DomainDataset> sources, const DomainDataset& target_train,
                            const DomainDataset& target_full);

struct CellResult {
    Method method = Method::prop;
    std::size_t repeat = 0;
    bool ok = false;
    double mse = 0.0;
    std::string error;
    std::vector<std::size_t> rows;  // target rows predicted
    Vector y_true, y_pred;
    nlohmann::json diagnostics;
};

struct MethodSummary {
    Method method = Method::prop;
    std::size_t successes = 0;
    std::size_t failures = 0;
    double mean = 0.0;             // raw MSE
    double stderr_ = 0.0;          // sample std / sqrt(successes)
    double normalized_mean = 0.0;  // divided by the LOO mean; NaN without LOO
    double normalized_stderr = 0.0;
};

struct ResultTable {
    std::string target;
    std::size_t repeats = 0;
    std::vector<CellResult> cells;  // ordered by (method, repeat)
    std::vector<MethodSummary> summary;
    double loo_reference = 0.0;     // NaN when LOO was not run

    const MethodSummary* find(Method m) const;
    void write_csv(const std::filesystem::path& path) const;
    void write_predictions_csv(const std::filesystem::path& path) const;
    nlohmann::json to_json() const;
    // Fixed-width table with 4 significant digits.
    std::string format() const;
};

// Aggregates cells per method in `methods` order.
std::vector<MethodSummary> summarize(const std::vector<CellResult>& cells, const std::vector<Method>& methods,
                                     double* loo_reference = nullptr);

// Rebuilds a table from a predictions CSV (method,repeat,row,y_true,y_pred).
ResultTable table_from_predictions(const std::filesystem::path& path);

// Repeat r splits with derive_seed(seed, "split", r). GCL grid and source
// filter are fitted once and shared by all repeats.
ResultTable run_experiment(const std::vector<DomainDataset>& domains, const ExperimentConfig& config);

}  // namespace mechxfer
