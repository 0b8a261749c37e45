// mechxfer: synthetic benchmarks, adaptation experiments, theory checks and
// evaluation of saved predictions.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "CLI11.hpp"
#include "json.hpp"
#include "manifest.hpp"
#include "mechxfer/bench.hpp"
#include "mechxfer/flow.hpp"
#include "mechxfer/synth.hpp"
#include "mechxfer/theory.hpp"

namespace fs = std::filesystem;
using namespace mechxfer;
using boost::property_tree::ptree;

namespace {

enum Exit { kOk = 0, kFailed = 1, kError = 2 };

ptree read_config(const std::string& path) {
    ptree pt;
    if (path.empty()) return pt;
    try {
        boost::property_tree::read_ini(path, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw std::runtime_error("config " + path + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    return pt;
}

template <class T>
T setting(const ptree& pt, const std::string& key, T fallback) {
    const auto v = pt.get_optional<std::string>(key);
    if (!v) return fallback;
    std::istringstream is(*v);
    T out{};
    is >> std::boolalpha >> out;
    if (!is || !(is >> std::ws).eof()) throw std::runtime_error("config key " + key + ": cannot parse '" + *v + "'");
    return out;
}

template <class T>
std::vector<T> setting_list(const ptree& pt, const std::string& key, std::vector<T> fallback) {
    const auto v = pt.get_optional<std::string>(key);
    if (!v) return fallback;
    std::vector<T> out;
    std::stringstream ss(*v);
    for (std::string item; std::getline(ss, item, ',');) {
        std::istringstream is(item);
        T x{};
        is >> x;
        if (!is || !(is >> std::ws).eof()) throw std::runtime_error("config key " + key + ": cannot parse '" + item + "'");
        out.push_back(x);
    }
    if (out.empty()) throw std::runtime_error("config key " + key + " is empty");
    return out;
}

std::string safe_name(std::string s) {
    for (char& c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
    return s;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << j.dump(2) << '\n';
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
    std::string out;
};

// ---- synth ----

int cmd_synth(const Common& c, const std::vector<std::string>& argv) {
    const ptree pt = read_config(c.config);
    SynthConfig s;
    s.dim = setting(pt, "synth.dim", s.dim);
    s.source_domains = setting(pt, "synth.source_domains", s.source_domains);
    s.samples_per_domain = setting(pt, "synth.samples_per_domain", s.samples_per_domain);
    s.target_samples = setting(pt, "synth.target_samples", s.target_samples);
    s.kind = parse_ic_kind(setting<std::string>(pt, "synth.kind", to_string(s.kind)), "synth.kind");
    s.mixing_depth = setting(pt, "synth.mixing_depth", s.mixing_depth);
    s.mixing_hidden = setting(pt, "synth.mixing_hidden", s.mixing_hidden);
    s.mixing_gain = setting(pt, "synth.mixing_gain", s.mixing_gain);
    s.location_range = setting(pt, "synth.location_range", s.location_range);
    s.scale_min = setting(pt, "synth.scale_min", s.scale_min);
    s.scale_max = setting(pt, "synth.scale_max", s.scale_max);
    s.seed = c.seed.value_or(setting<std::uint64_t>(pt, "synth.seed", s.seed));
    s.validate();

    cli::Manifest m("synth", argv);
    m.set_seed(s.seed);
    m.set_config({{"dim", s.dim},
                  {"source_domains", s.source_domains},
                  {"samples_per_domain", s.samples_per_domain},
                  {"target_samples", s.target_samples},
                  {"kind", to_string(s.kind)},
                  {"mixing_depth", s.mixing_depth},
                  {"mixing_hidden", s.mixing_hidden},
                  {"mixing_gain", s.mixing_gain},
                  {"location_range", s.location_range},
                  {"scale_min", s.scale_min},
                  {"scale_max", s.scale_max}});
    if (!c.config.empty()) m.add_input(c.config);
    const auto paths = write_benchmark(make_benchmark(s), c.out);
    m.write(c.out, paths, kOk);
    std::cout << "wrote " << paths.size() << " files to " << c.out << '\n';
    return kOk;
}

// ---- adapt ----

struct AdaptFlags {
    std::vector<std::string> data;
    std::string target;
    std::string methods;
    std::optional<std::size_t> budget;
    std::optional<std::size_t> repeats;
    std::string flow;
    bool strict = false;
};

std::vector<DomainDataset> load_inputs(const std::vector<std::string>& paths) {
    std::vector<DomainDataset> out;
    for (const auto& p : paths) {
        auto part = fs::is_directory(p) ? load_domain_dir(p) : load_panel_csv(p, infer_schema(read_csv_header(p)));
        for (auto& d : part) out.push_back(std::move(d));
    }
    return out;
}

nlohmann::json describe(const ExperimentConfig& e) {
    std::vector<std::string> methods;
    for (auto m : e.methods) methods.push_back(to_string(m));
    nlohmann::json j{{"train_fraction", e.train_fraction},
                     {"repeats", e.repeats},
                     {"methods", methods},
                     {"psi_hidden_grid", e.psi_hidden_grid},
                     {"weight_decay_grid", e.weight_decay_grid},
                     {"budget", e.budget},
                     {"ocsvm_nu", e.ocsvm_nu},
                     {"strict_loocv", e.strict_loocv},
                     {"fixed_flow", e.fixed_flow.has_value()},
                     {"jobs", e.jobs},
                     {"gcl",
                      {{"lr", e.gcl.lr},
                       {"max_epochs", e.gcl.max_epochs},
                       {"batch_size", e.gcl.batch_size},
                       {"eval_every", e.gcl.eval_every},
                       {"flow_depth", e.gcl.flow.depth},
                       {"flow_hidden", e.gcl.flow.coupling_hidden}}}};
    if (e.train_size) j["train_size"] = *e.train_size;
    return j;
}

int cmd_adapt(const Common& c, const AdaptFlags& f, const std::vector<std::string>& argv) {
    const ptree pt = read_config(c.config);
    ExperimentConfig e;
    e.train_fraction = setting(pt, "adapt.train_fraction", e.train_fraction);
    if (pt.get_optional<std::string>("adapt.train_size")) e.train_size = setting<std::size_t>(pt, "adapt.train_size", 0);
    e.repeats = f.repeats.value_or(setting(pt, "adapt.repeats", e.repeats));
    e.methods = parse_methods(!f.methods.empty() ? f.methods : setting<std::string>(pt, "adapt.methods", "Prop,TarOnly,SrcOnly,SandTV,LOO"));
    e.psi_hidden_grid = setting_list(pt, "adapt.psi_hidden_grid", e.psi_hidden_grid);
    e.weight_decay_grid = setting_list(pt, "adapt.weight_decay_grid", e.weight_decay_grid);
    e.budget = f.budget.value_or(setting(pt, "adapt.budget", e.budget));
    e.ocsvm_nu = setting(pt, "adapt.ocsvm_nu", e.ocsvm_nu);
    e.strict_loocv = f.strict || setting(pt, "adapt.strict_loocv", false);
    e.gcl.lr = setting(pt, "gcl.lr", e.gcl.lr);
    e.gcl.max_epochs = setting(pt, "gcl.max_epochs", e.gcl.max_epochs);
    e.gcl.batch_size = setting(pt, "gcl.batch_size", e.gcl.batch_size);
    e.gcl.eval_every = setting(pt, "gcl.eval_every", e.gcl.eval_every);
    e.gcl.flow.depth = setting(pt, "gcl.flow_depth", e.gcl.flow.depth);
    e.gcl.flow.coupling_hidden = setting(pt, "gcl.flow_hidden", e.gcl.flow.coupling_hidden);
    e.seed = c.seed.value_or(setting<std::uint64_t>(pt, "adapt.seed", 0));
    e.jobs = c.jobs;
    if (!f.flow.empty()) e.fixed_flow = load_flow(f.flow);
    e.validate();

    std::vector<std::string> data = f.data;
    if (data.empty()) {
        const char* env = std::getenv("MECHXFER_DATA");
        if (!env || !*env) throw std::runtime_error("no data given and MECHXFER_DATA is not set");
        data.push_back(env);
    }
    const auto domains = load_inputs(data);
    if (domains.empty()) throw std::runtime_error("no domains loaded");

    std::vector<std::string> targets;
    if (f.target == "all") {
        for (const auto& d : domains) targets.push_back(d.id);
    } else {
        std::stringstream ss(f.target);
        for (std::string t; std::getline(ss, t, ',');)
            if (!t.empty()) targets.push_back(t);
    }
    if (targets.empty()) throw std::runtime_error("no target domain given");

    cli::Manifest m("adapt", argv);
    m.set_seed(e.seed);
    auto cfg = describe(e);
    cfg["targets"] = targets;
    m.set_config(cfg);
    if (!c.config.empty()) m.add_input(c.config);
    for (const auto& p : data) m.add_input(p);
    if (!f.flow.empty()) m.add_input(f.flow);

    const fs::path out = c.out;
    fs::create_directories(out);
    std::vector<fs::path> outputs;
    std::ofstream summary(out / "summary.csv");
    summary << "target,method,successes,failures,mean_mse,stderr_mse,normalized_mean,normalized_stderr\n";
    std::vector<std::string> failures;
    auto num = [](double v) {
        if (!std::isfinite(v)) return std::string();
        char b[40];
        std::snprintf(b, sizeof b, "%.17g", v);
        return std::string(b);
    };
    for (const auto& target : targets) {
        e.target = target;
        const auto t = run_experiment(domains, e);
        const std::string stem = safe_name(target);
        outputs.push_back(out / ("results_" + stem + ".csv"));
        t.write_csv(outputs.back());
        outputs.push_back(out / ("results_" + stem + ".json"));
        write_json(outputs.back(), t.to_json());
        outputs.push_back(out / ("predictions_" + stem + ".csv"));
        t.write_predictions_csv(outputs.back());
        for (const auto& s : t.summary)
            summary << target << ',' << to_string(s.method) << ',' << s.successes << ',' << s.failures << ','
                    << num(s.mean) << ',' << num(s.stderr_) << ',' << num(s.normalized_mean) << ','
                    << num(s.normalized_stderr) << '\n';
        for (const auto& cell : t.cells)
            if (!cell.ok)
                failures.push_back(target + " " + to_string(cell.method) + " repeat " + std::to_string(cell.repeat) +
                                   ": " + cell.error);
        std::cout << t.format() << '\n';
    }
    summary.close();
    outputs.push_back(out / "summary.csv");
    for (const auto& msg : failures) std::cerr << "failed: " << msg << '\n';
    const int code = failures.empty() ? kOk : kFailed;
    m.write(out, outputs, code);
    return code;
}

// ---- verify-theory ----

int cmd_verify(const Common& c, const std::string& inject, const std::vector<std::string>& argv) {
    const ptree pt = read_config(c.config);
    TheoryOptions o;
    o.seed = c.seed.value_or(setting<std::uint64_t>(pt, "theory.seed", 0));
    o.kernels_per_case = setting(pt, "theory.kernels_per_case", o.kernels_per_case);
    o.exact_configs = setting(pt, "theory.exact_configs", o.exact_configs);
    o.mc_reps = setting(pt, "theory.mc_reps", o.mc_reps);
    o.mc_n = setting(pt, "theory.mc_n", o.mc_n);
    o.mc_reference_draws = setting(pt, "theory.mc_reference_draws", o.mc_reference_draws);
    if (inject == "uniform")
        o.weights = [](std::size_t, std::size_t dim) { return std::vector<double>(dim, 1.0 / double(dim)); };
    else if (!inject.empty())
        throw std::runtime_error("unknown weight injection '" + inject + "'");

    cli::Manifest m("verify-theory", argv);
    m.set_seed(o.seed);
    m.set_config({{"kernels_per_case", o.kernels_per_case},
                  {"exact_configs", o.exact_configs},
                  {"mc_reps", o.mc_reps},
                  {"mc_n", o.mc_n},
                  {"mc_reference_draws", o.mc_reference_draws},
                  {"inject_weights", inject}});
    if (!c.config.empty()) m.add_input(c.config);

    const auto report = run_theory_suite(o);
    const auto j = report.to_json(o);
    for (const auto& p : validate_theory_report(j)) throw std::logic_error("report layout: " + p);
    const fs::path out = c.out;
    fs::create_directories(out);
    write_json(out / "verify_theory.json", j);
    for (const auto& check : report.checks) std::cout << (check.passed ? "PASS " : "FAIL ") << check.name << '\n';
    const int code = report.passed() ? kOk : kFailed;
    m.write(out, {out / "verify_theory.json"}, code);
    return code;
}

// ---- eval ----

int cmd_eval(const Common& c, const std::string& predictions, const std::vector<std::string>& argv) {
    auto t = table_from_predictions(predictions);
    t.target = fs::path(predictions).stem().string();
    if (t.target.rfind("predictions_", 0) == 0) t.target.erase(0, 12);
    std::cout << t.format();
    if (!c.out.empty()) {
        const fs::path out = c.out;
        fs::create_directories(out);
        cli::Manifest m("eval", argv);
        m.add_input(predictions);
        t.write_csv(out / "eval.csv");
        write_json(out / "eval.json", t.to_json());
        m.write(out, {out / "eval.csv", out / "eval.json"}, kOk);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Domain adaptation for regression by recombining independent components"};
    app.require_subcommand(1);
    app.fallthrough();
    Common c;
    app.add_option("--config", c.config, "INI file with [synth], [adapt], [gcl] and [theory] sections")
        ->check(CLI::ExistingFile);
    app.add_option("--seed", c.seed, "master seed (overrides the config)");
    app.add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", c.out, "output directory");

    auto* synth = app.add_subcommand("synth", "write a synthetic benchmark");

    AdaptFlags af;
    auto* adapt = app.add_subcommand("adapt", "run the adaptation experiment");
    adapt->add_option("data", af.data, "CSV files or directories (default: $MECHXFER_DATA)");
    adapt->add_option("--target", af.target, "target domain id, comma list, or 'all'")->required();
    adapt->add_option("--methods", af.methods, "comma list of Prop,TarOnly,SrcOnly,SandTV,LOO");
    adapt->add_option("--budget", af.budget, "maximum number of recombined candidates");
    adapt->add_option("--repeats", af.repeats, "train/test splits per target");
    adapt->add_option("--flow", af.flow, "fixed mixing estimate (flow JSON) instead of training")
        ->check(CLI::ExistingFile);
    adapt->add_flag("--strict-loocv", af.strict, "hold out derived synthetic rows with their original");

    std::string inject;
    auto* verify = app.add_subcommand("verify-theory", "run the estimator theory checks");
    verify->add_option("--inject-weights", inject, "negative control: replace the decomposition weights")
        ->group("");

    std::string predictions;
    auto* eval = app.add_subcommand("eval", "metrics from a saved predictions CSV");
    eval->add_option("predictions", predictions, "predictions CSV")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);
    const std::vector<std::string> args(argv, argv + argc);
    try {
        if ((synth->parsed() || adapt->parsed() || verify->parsed()) && c.out.empty())
            throw std::runtime_error("--out is required");
        if (synth->parsed()) return cmd_synth(c, args);
        if (adapt->parsed()) return cmd_adapt(c, af, args);
        if (verify->parsed()) return cmd_verify(c, inject, args);
        if (eval->parsed()) return cmd_eval(c, predictions, args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kError;
    }
    return kError;
}
