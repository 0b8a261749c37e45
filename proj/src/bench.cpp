#include "mechxfer/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace mechxfer {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& text, double& out) {
    const std::string t = trim(text);
    if (t.empty()) return false;
    char* end = nullptr;
    out = std::strtod(t.c_str(), &end);
    return end == t.c_str() + t.size() && std::isfinite(out);
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt4(double v) {
    if (std::isnan(v)) return "-";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

// Runs f(0..n-1) on up to `jobs` threads. The first exception is rethrown
// after all workers finish.
template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& f) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w)
        workers.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : workers) t.join();
    if (error) std::rethrow_exception(error);
}

Matrix features_of(const Matrix& rows) {
    return rows.leftCols(rows.cols() - 1);
}

Vector labels_of(const Matrix& rows) {
    return rows.col(rows.cols() - 1);
}

std::vector<std::size_t> iota_n(std::size_t n, std::size_t from = 0) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), from);
    return v;
}

DomainDataset take_rows(const DomainDataset& d, const std::vector<std::size_t>& rows, const std::string& suffix) {
    DomainDataset out;
    out.id = d.id + suffix;
    out.columns = d.columns;
    out.rows.resize(static_cast<Eigen::Index>(rows.size()), d.rows.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.rows.row(Eigen::Index(i)) = d.rows.row(Eigen::Index(rows[i]));
    return out;
}

double mse_of(const Vector& y, const Vector& yhat) {
    return (y - yhat).squaredNorm() / double(y.size());
}

}  // namespace

PanelSchema gasoline_schema() {
    return {"COUNTRY", {"LINCOMEP", "LRPMG", "LCARPCAP"}, "LGASPCAR"};
}

PanelSchema synthetic_schema(std::size_t dim) {
    PanelSchema s{"domain", {}, "y"};
    for (std::size_t d = 1; d < dim; ++d) s.feature_columns.push_back("x" + std::to_string(d));
    return s;
}

PanelSchema infer_schema(const std::vector<std::string>& header) {
    if (std::find(header.begin(), header.end(), "COUNTRY") != header.end()) return gasoline_schema();
    if (std::find(header.begin(), header.end(), "domain") == header.end())
        throw std::invalid_argument("cannot infer the CSV schema: no 'COUNTRY' or 'domain' column");
    std::vector<std::string> values;
    for (const auto& h : header)
        if (h != "domain") values.push_back(h);
    if (values.size() < 2) throw std::invalid_argument("CSV needs at least one feature column and a label column");
    PanelSchema s{"domain", {}, values.back()};
    s.feature_columns.assign(values.begin(), values.end() - 1);
    return s;
}

std::vector<std::string> read_csv_header(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error(path.string() + ": empty file");
    auto h = split_csv_line(line);
    for (auto& c : h) c = trim(c);
    return h;
}

std::vector<DomainDataset> load_panel_csv(const std::filesystem::path& path, const PanelSchema& schema) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    const std::string where = path.string();
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error(where + ": empty file");
    auto header = split_csv_line(line);
    for (auto& c : header) c = trim(c);
    auto column = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw std::runtime_error(where + ": missing column '" + name + "'");
        return std::size_t(it - header.begin());
    };
    const std::size_t dom_col = column(schema.domain_column);
    std::vector<std::size_t> value_cols;
    std::vector<std::string> names;
    for (const auto& f : schema.feature_columns) {
        value_cols.push_back(column(f));
        names.push_back(f);
    }
    value_cols.push_back(column(schema.label_column));
    names.push_back(schema.label_column);

    std::vector<std::string> order;
    std::map<std::string, std::vector<std::vector<double>>> rows;
    for (std::size_t lineno = 2; std::getline(is, line); ++lineno) {
        if (trim(line).empty() || trim(line) == "\r") continue;
        const auto fields = split_csv_line(line);
        if (fields.size() < header.size())
            throw std::runtime_error(where + ", line " + std::to_string(lineno) + ": expected " +
                                     std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
        const std::string dom = trim(fields[dom_col]);
        if (dom.empty()) throw std::runtime_error(where + ", line " + std::to_string(lineno) + ": empty domain value");
        std::vector<double> r;
        for (std::size_t c = 0; c < value_cols.size(); ++c) {
            double v;
            if (!parse_double(fields[value_cols[c]], v))
                throw std::runtime_error(where + ", line " + std::to_string(lineno) + ", column " + names[c] + ": '" +
                                         fields[value_cols[c]] + "' is not a finite number");
            r.push_back(v);
        }
        auto [it, fresh] = rows.try_emplace(dom);
        if (fresh) order.push_back(dom);
        it->second.push_back(std::move(r));
    }
    if (order.empty()) throw std::runtime_error(where + ": no data rows");

    std::vector<DomainDataset> out;
    for (const auto& dom : order) {
        const auto& rs = rows[dom];
        DomainDataset d;
        d.id = dom;
        d.columns = names;
        d.rows.resize(static_cast<Eigen::Index>(rs.size()), static_cast<Eigen::Index>(names.size()));
        for (std::size_t i = 0; i < rs.size(); ++i)
            for (std::size_t j = 0; j < names.size(); ++j) d.rows(Eigen::Index(i), Eigen::Index(j)) = rs[i][j];
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<DomainDataset> load_domain_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error(dir.string() + " is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no CSV files in " + dir.string());
    std::vector<DomainDataset> out;
    for (const auto& f : files) {
        auto part = load_panel_csv(f, infer_schema(read_csv_header(f)));
        for (auto& d : part) out.push_back(std::move(d));
    }
    return out;
}

TargetSplit split_target_count(const DomainDataset& target, std::size_t train_size, std::uint64_t seed) {
    const std::size_t n = target.size();
    if (train_size < 2) throw std::invalid_argument("target training split needs at least 2 rows, got " +
                                                    std::to_string(train_size));
    if (train_size >= n)
        throw std::invalid_argument("target training split of " + std::to_string(train_size) + " leaves no test rows (n = " +
                                    std::to_string(n) + ")");
    auto idx = iota_n(n);
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    TargetSplit s;
    s.train_rows.assign(idx.begin(), idx.begin() + std::ptrdiff_t(train_size));
    s.test_rows.assign(idx.begin() + std::ptrdiff_t(train_size), idx.end());
    std::sort(s.train_rows.begin(), s.train_rows.end());
    std::sort(s.test_rows.begin(), s.test_rows.end());
    s.train = take_rows(target, s.train_rows, "");
    s.test = take_rows(target, s.test_rows, "");
    return s;
}

TargetSplit split_target(const DomainDataset& target, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("train fraction must lie in (0, 1)");
    return split_target_count(target, std::size_t(std::llround(fraction * double(target.size()))), seed);
}

std::string to_string(Method m) {
    switch (m) {
        case Method::prop: return "Prop";
        case Method::tar_only: return "TarOnly";
        case Method::src_only: return "SrcOnly";
        case Method::sand_tv: return "SandTV";
        case Method::loo: return "LOO";
    }
    return "?";
}

Method parse_method(const std::string& text) {
    for (auto m : all_methods())
        if (to_string(m) == text) return m;
    throw std::invalid_argument("unknown method '" + text + "' (expected Prop, TarOnly, SrcOnly, SandTV or LOO)");
}

std::vector<Method> parse_methods(const std::string& comma_list) {
    std::vector<Method> out;
    std::stringstream ss(comma_list);
    for (std::string item; std::getline(ss, item, ',');) {
        item = trim(item);
        if (item.empty()) continue;
        const Method m = parse_method(item);
        if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
    if (out.empty()) throw std::invalid_argument("method list is empty");
    return out;
}

std::vector<Method> all_methods() {
    return {Method::prop, Method::tar_only, Method::src_only, Method::sand_tv, Method::loo};
}

void ExperimentConfig::validate() const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("train fraction must lie in (0, 1)");
    if (repeats < 1) throw std::invalid_argument("repeats must be >= 1");
    if (methods.empty()) throw std::invalid_argument("method list is empty");
    if (psi_hidden_grid.empty() || weight_decay_grid.empty()) throw std::invalid_argument("GCL grid is empty");
    if (!(ocsvm_nu > 0.0 && ocsvm_nu < 1.0)) throw std::invalid_argument("OCSVM nu must lie in (0, 1)");
    if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");
    gcl.validate();
}

std::vector<GclCell> train_gcl_grid(std::span<const DomainDataset> sources, const ExperimentConfig& config) {
    if (config.fixed_flow) {
        GclCell c;
        c.epochs = {0};
        c.flows = {*config.fixed_flow};
        return {c};
    }
    if (sources.size() < 2) throw std::invalid_argument("GCL needs at least 2 source domains");
    std::vector<GclCell> cells;
    for (auto h : config.psi_hidden_grid)
        for (auto wd : config.weight_decay_grid) {
            GclCell c;
            c.psi_hidden = h;
            c.weight_decay = wd;
            cells.push_back(c);
        }
    parallel_for(cells.size(), config.jobs, [&](std::size_t i) {
        GclCell& c = cells[i];
        GclTrainConfig cfg = config.gcl;
        cfg.psi_hidden = c.psi_hidden;
        cfg.weight_decay = c.weight_decay;
        cfg.seed = derive_seed(config.seed, "gcl", i);
        cfg.flow.dim = sources.front().dim();
        try {
            auto result = train_gcl(sources, cfg, [&c](const GclModel& model, std::size_t epoch) {
                c.epochs.push_back(epoch);
                c.flows.push_back(model.flow);
                return 0.0;
            });
            c.log = std::move(result.log);
        } catch (const std::exception& e) {
            c.error = e.what();
            c.epochs.clear();
            c.flows.clear();
        }
    });
    return cells;
}

OcsvmModel fit_source_filter(std::span<const DomainDataset> sources, double nu) {
    if (sources.empty()) throw std::invalid_argument("source filter needs source data");
    OcsvmOptions opt;
    opt.nu = nu;
    opt.gamma = double(sources.front().dim());
    return fit_ocsvm(pool_rows(sources), opt);
}

SnapshotFit score_snapshot(const FlowParams& flow, const OcsvmModel& filter, const DomainDataset& target_train,
                           std::size_t budget, std::uint64_t plan_seed, bool strict) {
    const std::size_t n = target_train.size(), dim = target_train.dim();
    const Matrix ics = extract_ics(flow, target_train);
    Rng rng(plan_seed);
    const auto plan = plan_combinations(n, dim, budget, rng);
    SnapshotFit fit;
    fit.augmented = filter_and_assemble(synthesize_candidates(flow, ics, plan), plan, &filter, target_train.rows);
    const Matrix rows = fit.augmented.training_rows();
    const Matrix x = features_of(rows);
    const Vector y = labels_of(rows);
    fit.gamma = median_bandwidth(x);
    const auto held = iota_n(n);
    LambdaSelection sel;
    if (strict) {
        const auto prov = fit.augmented.training_provenance();
        std::vector<std::vector<std::size_t>> drop(n);
        for (std::size_t i = 0; i < n; ++i) drop[i].push_back(i);
        for (std::size_t r = n; r < prov.size(); ++r) {
            auto t = prov[r];
            std::sort(t.begin(), t.end());
            t.erase(std::unique(t.begin(), t.end()), t.end());
            for (auto i : t) drop[i].push_back(r);
        }
        sel = select_lambda_grouped(x, y, fit.gamma, held, drop);
    } else {
        sel = select_lambda(x, y, fit.gamma, held);
    }
    fit.lambda = sel.lambda;
    fit.loocv = sel.score;
    return fit;
}

nlohmann::json to_json(const AdaptDiagnostics& d) {
    return {{"cell", d.cell},
            {"psi_hidden", d.psi_hidden},
            {"weight_decay", d.weight_decay},
            {"epoch", d.epoch},
            {"candidates", d.candidates},
            {"augmented_size", d.augmented_size},
            {"kept_fraction", d.kept_fraction},
            {"lambda", d.lambda},
            {"gamma", d.gamma},
            {"loocv", d.loocv}};
}

AdaptResult adapt_with_snapshots(const std::vector<GclCell>& cells, const OcsvmModel& filter,
                                 const DomainDataset& target_train, const ExperimentConfig& config,
                                 std::uint64_t plan_seed) {
    std::optional<SnapshotFit> best;
    AdaptDiagnostics diag;
    const FlowParams* best_flow = nullptr;
    std::string first_error;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        if (!cells[c].error.empty() && first_error.empty()) first_error = "GCL cell " + std::to_string(c) + ": " + cells[c].error;
        for (std::size_t s = 0; s < cells[c].flows.size(); ++s) {
            try {
                SnapshotFit fit = score_snapshot(cells[c].flows[s], filter, target_train, config.budget, plan_seed,
                                                 config.strict_loocv);
                if (!best || fit.loocv < best->loocv) {
                    diag.cell = c;
                    diag.psi_hidden = cells[c].psi_hidden;
                    diag.weight_decay = cells[c].weight_decay;
                    diag.epoch = cells[c].epochs[s];
                    best_flow = &cells[c].flows[s];
                    best = std::move(fit);
                }
            } catch (const std::exception& e) {
                if (first_error.empty())
                    first_error = "snapshot " + std::to_string(cells[c].epochs[s]) + " of cell " + std::to_string(c) +
                                  ": " + e.what();
            }
        }
    }
    if (!best) throw std::runtime_error("no mixing estimate could be scored" + (first_error.empty() ? "" : " (" + first_error + ")"));
    const Matrix rows = best->augmented.training_rows();
    diag.candidates = best->augmented.tuples.size();
    diag.augmented_size = std::size_t(rows.rows());
    diag.kept_fraction = best->augmented.inlier_fraction();
    diag.lambda = best->lambda;
    diag.gamma = best->gamma;
    diag.loocv = best->loocv;
    return {fit_krr(features_of(rows), labels_of(rows), best->lambda, best->gamma), *best_flow, diag};
}

AdaptResult pipeline_adapt(std::span<const DomainDataset> sources, const DomainDataset& target_train,
                           const ExperimentConfig& config) {
    if (sources.size() < 2) throw std::invalid_argument("adaptation needs at least 2 source domains");
    if (target_train.size() == 0) throw std::invalid_argument("target training set is empty");
    const auto cells = train_gcl_grid(sources, config);
    const auto filter = fit_source_filter(sources, config.ocsvm_nu);
    return adapt_with_snapshots(cells, filter, target_train, config, derive_seed(config.seed, "plan"));
}

BaselineResult run_baseline(Method method, std::span<const DomainDataset> sources, const DomainDataset& target_train,
                            const DomainDataset& target_full) {
    BaselineResult out;
    auto fit_on = [&](const Matrix& rows, const std::vector<std::size_t>& held) {
        const Matrix x = features_of(rows);
        const Vector y = labels_of(rows);
        out.gamma = median_bandwidth(x);
        out.selection = select_lambda(x, y, out.gamma, held);
        out.model = fit_krr(x, y, out.selection.lambda, out.gamma);
    };
    switch (method) {
        case Method::tar_only:
            fit_on(target_train.rows, iota_n(target_train.size()));
            break;
        case Method::src_only: {
            if (sources.empty()) throw std::invalid_argument("SrcOnly needs source data");
            const Matrix pooled = pool_rows(sources);
            fit_on(pooled, iota_n(std::size_t(pooled.rows())));
            break;
        }
        case Method::sand_tv: {
            Matrix rows = target_train.rows;
            if (!sources.empty()) {
                const Matrix pooled = pool_rows(sources);
                rows.resize(pooled.rows() + target_train.rows.rows(), pooled.cols());
                rows << pooled, target_train.rows;
            }
            fit_on(rows, iota_n(target_train.size(), std::size_t(rows.rows()) - target_train.size()));
            break;
        }
        case Method::loo: {
            const Matrix x = target_full.features();
            const Vector y = target_full.labels();
            const auto all = iota_n(target_full.size());
            out.gamma = median_bandwidth(x);
            out.selection = select_lambda(x, y, out.gamma, all);
            out.loo_predictions = y - loocv_residuals(x, y, out.selection.lambda, out.gamma, all);
            break;
        }
        case Method::prop:
            throw std::invalid_argument("Prop is not a baseline");
    }
    return out;
}

const MethodSummary* ResultTable::find(Method m) const {
    for (const auto& s : summary)
        if (s.method == m) return &s;
    return nullptr;
}

std::vector<MethodSummary> summarize(const std::vector<CellResult>& cells, const std::vector<Method>& methods,
                                     double* loo_reference) {
    std::vector<MethodSummary> out;
    for (auto m : methods) {
        MethodSummary s;
        s.method = m;
        std::vector<double> v;
        for (const auto& c : cells)
            if (c.method == m) {
                if (c.ok) v.push_back(c.mse);
                else ++s.failures;
            }
        s.successes = v.size();
        s.mean = v.empty() ? kNaN : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
        if (v.size() >= 2) {
            double ss = 0.0;
            for (double x : v) ss += (x - s.mean) * (x - s.mean);
            s.stderr_ = std::sqrt(ss / double(v.size() - 1)) / std::sqrt(double(v.size()));
        } else {
            s.stderr_ = kNaN;
        }
        out.push_back(s);
    }
    double ref = kNaN;
    for (const auto& s : out)
        if (s.method == Method::loo && s.successes > 0 && s.mean > 0.0) ref = s.mean;
    for (auto& s : out) {
        s.normalized_mean = s.mean / ref;
        s.normalized_stderr = s.stderr_ / ref;
    }
    if (loo_reference) *loo_reference = ref;
    return out;
}

void ResultTable::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "target,method,repeat,status,mse,normalized_mse,error\n";
    for (const auto& c : cells) {
        std::string err = c.error;
        std::replace(err.begin(), err.end(), '"', '\'');
        os << target << ',' << to_string(c.method) << ',' << c.repeat << ',' << (c.ok ? "ok" : "failed") << ','
           << (c.ok ? fmt17(c.mse) : "") << ',' << (c.ok && std::isfinite(loo_reference) ? fmt17(c.mse / loo_reference) : "")
           << ",\"" << err << "\"\n";
    }
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

void ResultTable::write_predictions_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "method,repeat,row,y_true,y_pred\n";
    for (const auto& c : cells) {
        if (!c.ok) continue;
        for (std::size_t i = 0; i < c.rows.size(); ++i)
            os << to_string(c.method) << ',' << c.repeat << ',' << c.rows[i] << ',' << fmt17(c.y_true(Eigen::Index(i)))
               << ',' << fmt17(c.y_pred(Eigen::Index(i))) << '\n';
    }
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

nlohmann::json ResultTable::to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["target"] = target;
    j["repeats"] = repeats;
    j["loo_reference"] = num(loo_reference);
    j["summary"] = nlohmann::json::array();
    for (const auto& s : summary)
        j["summary"].push_back({{"method", to_string(s.method)},
                                {"successes", s.successes},
                                {"failures", s.failures},
                                {"mean_mse", num(s.mean)},
                                {"stderr_mse", num(s.stderr_)},
                                {"normalized_mean", num(s.normalized_mean)},
                                {"normalized_stderr", num(s.normalized_stderr)}});
    j["cells"] = nlohmann::json::array();
    for (const auto& c : cells) {
        nlohmann::json cell{{"method", to_string(c.method)}, {"repeat", c.repeat}, {"ok", c.ok}};
        if (c.ok) cell["mse"] = c.mse;
        else cell["error"] = c.error;
        if (!c.diagnostics.is_null()) cell["diagnostics"] = c.diagnostics;
        j["cells"].push_back(std::move(cell));
    }
    return j;
}

std::string ResultTable::format() const {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "target %s, %zu repeats\n%-8s %10s %10s %10s %10s %6s\n", target.c_str(), repeats,
                  "method", "mse", "stderr", "norm", "norm_se", "fail");
    os << line;
    for (const auto& s : summary) {
        std::snprintf(line, sizeof line, "%-8s %10s %10s %10s %10s %6zu\n", to_string(s.method).c_str(),
                      fmt4(s.mean).c_str(), fmt4(s.stderr_).c_str(), fmt4(s.normalized_mean).c_str(),
                      fmt4(s.normalized_stderr).c_str(), s.failures);
        os << line;
    }
    return os.str();
}

ResultTable table_from_predictions(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(is, line);
    auto header = split_csv_line(line);
    for (auto& h : header) h = trim(h);
    const std::vector<std::string> expect{"method", "repeat", "row", "y_true", "y_pred"};
    if (header != expect) throw std::runtime_error(path.string() + ": expected header method,repeat,row,y_true,y_pred");
    std::vector<Method> methods;
    std::vector<std::pair<Method, std::size_t>> keys;
    std::map<std::pair<int, std::size_t>, std::pair<std::vector<double>, std::vector<double>>> data;
    std::map<std::pair<int, std::size_t>, std::vector<std::size_t>> rows;
    ResultTable t;
    for (std::size_t lineno = 2; std::getline(is, line); ++lineno) {
        if (trim(line).empty()) continue;
        const auto f = split_csv_line(line);
        double rep, row, yt, yp;
        if (f.size() != 5 || !parse_double(f[1], rep) || !parse_double(f[2], row) || !parse_double(f[3], yt) ||
            !parse_double(f[4], yp))
            throw std::runtime_error(path.string() + ", line " + std::to_string(lineno) + ": malformed prediction row");
        const Method m = parse_method(trim(f[0]));
        if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
        const std::pair<int, std::size_t> key{int(m), std::size_t(rep)};
        if (!data.count(key)) keys.emplace_back(m, std::size_t(rep));
        data[key].first.push_back(yt);
        data[key].second.push_back(yp);
        rows[key].push_back(std::size_t(row));
        t.repeats = std::max(t.repeats, std::size_t(rep) + 1);
    }
    std::stable_sort(keys.begin(), keys.end(), [&](const auto& a, const auto& b) {
        const auto ia = std::find(methods.begin(), methods.end(), a.first) - methods.begin();
        const auto ib = std::find(methods.begin(), methods.end(), b.first) - methods.begin();
        return ia != ib ? ia < ib : a.second < b.second;
    });
    for (const auto& [m, r] : keys) {
        const auto& [yt, yp] = data[{int(m), r}];
        CellResult c;
        c.method = m;
        c.repeat = r;
        c.ok = true;
        c.rows = rows[{int(m), r}];
        c.y_true = Eigen::Map<const Vector>(yt.data(), Eigen::Index(yt.size()));
        c.y_pred = Eigen::Map<const Vector>(yp.data(), Eigen::Index(yp.size()));
        c.mse = mse_of(c.y_true, c.y_pred);
        t.cells.push_back(std::move(c));
    }
    t.summary = summarize(t.cells, methods, &t.loo_reference);
    return t;
}

ResultTable run_experiment(const std::vector<DomainDataset>& domains, const ExperimentConfig& config) {
    config.validate();
    std::size_t target_index = domains.size();
    for (std::size_t k = 0; k < domains.size(); ++k)
        if (domains[k].id == config.target) target_index = k;
    if (target_index == domains.size()) {
        std::string avail;
        for (const auto& d : domains) avail += (avail.empty() ? "" : ", ") + d.id;
        throw std::invalid_argument("target domain '" + config.target + "' not found; available: " + avail);
    }
    const DomainDataset& target = domains[target_index];
    std::vector<DomainDataset> sources;
    for (std::size_t k = 0; k < domains.size(); ++k) {
        domains[k].validate();
        if (domains[k].dim() != target.dim()) throw std::invalid_argument("domain " + domains[k].id + " has a different width");
        if (k != target_index) sources.push_back(domains[k]);
    }
    if (sources.size() < 2) throw std::invalid_argument("need at least 2 source domains besides the target");

    auto wants = [&](Method m) { return std::find(config.methods.begin(), config.methods.end(), m) != config.methods.end(); };

    // Work shared by all repeats.
    std::vector<GclCell> cells;
    std::optional<OcsvmModel> filter;
    std::string prop_error;
    if (wants(Method::prop)) {
        try {
            cells = train_gcl_grid(sources, config);
            filter = fit_source_filter(sources, config.ocsvm_nu);
        } catch (const std::exception& e) {
            prop_error = e.what();
        }
    }
    std::optional<BaselineResult> src_only, loo;
    std::string src_error, loo_error;
    if (wants(Method::src_only)) {
        try {
            src_only = run_baseline(Method::src_only, sources, target, target);
        } catch (const std::exception& e) {
            src_error = e.what();
        }
    }
    if (wants(Method::loo)) {
        try {
            loo = run_baseline(Method::loo, sources, target, target);
        } catch (const std::exception& e) {
            loo_error = e.what();
        }
    }

    const std::size_t M = config.methods.size();
    std::vector<CellResult> grid(M * config.repeats);
    parallel_for(config.repeats, config.jobs, [&](std::size_t r) {
        const std::uint64_t split_seed = derive_seed(config.seed, "split", r);
        std::optional<TargetSplit> split;
        std::string split_error;
        try {
            split = config.train_size ? split_target_count(target, *config.train_size, split_seed)
                                      : split_target(target, config.train_fraction, split_seed);
        } catch (const std::exception& e) {
            split_error = e.what();
        }
        for (std::size_t mi = 0; mi < M; ++mi) {
            CellResult& c = grid[mi * config.repeats + r];
            c.method = config.methods[mi];
            c.repeat = r;
            try {
                if (c.method == Method::loo) {
                    if (!loo) throw std::runtime_error(loo_error);
                    c.rows = iota_n(target.size());
                    c.y_true = target.labels();
                    c.y_pred = loo->loo_predictions;
                    c.diagnostics = {{"lambda", loo->selection.lambda}, {"gamma", loo->gamma}};
                } else {
                    if (!split) throw std::runtime_error(split_error);
                    const Matrix x_test = split->test.features();
                    c.rows = split->test_rows;
                    c.y_true = split->test.labels();
                    if (c.method == Method::prop) {
                        if (!filter) throw std::runtime_error(prop_error);
                        const auto res =
                            adapt_with_snapshots(cells, *filter, split->train, config, derive_seed(config.seed, "plan", r));
                        c.y_pred = predict_rows(res.model, x_test);
                        c.diagnostics = to_json(res.diagnostics);
                    } else if (c.method == Method::src_only) {
                        if (!src_only) throw std::runtime_error(src_error);
                        c.y_pred = predict_rows(*src_only->model, x_test);
                        c.diagnostics = {{"lambda", src_only->selection.lambda}, {"gamma", src_only->gamma}};
                    } else {
                        const auto b = run_baseline(c.method, sources, split->train, target);
                        c.y_pred = predict_rows(*b.model, x_test);
                        c.diagnostics = {{"lambda", b.selection.lambda}, {"gamma", b.gamma}};
                    }
                }
                if (!c.y_pred.allFinite()) throw std::runtime_error("non-finite predictions");
                c.mse = mse_of(c.y_true, c.y_pred);
                c.ok = true;
            } catch (const std::exception& e) {
                c.ok = false;
                c.error = e.what();
                c.rows.clear();
            }
        }
    });

    ResultTable t;
    t.target = config.target;
    t.repeats = config.repeats;
    t.cells = std::move(grid);
    t.summary = summarize(t.cells, config.methods, &t.loo_reference);
    return t;
}

}  // namespace mechxfer
