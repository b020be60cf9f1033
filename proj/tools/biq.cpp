// biq: command-line front end for the biquality toolkit.
//
// Exit codes: 0 ok, 1 config or usage error, 2 some runs failed.
// BIQ_OUTPUT_ROOT sets the output root when --output is not given.

#include "biquality/biquality.hpp"
#include "biquality/config_io.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace biq;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitPartial = 2;

fs::path output_root(const std::string& flag, const fs::path& fallback) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("BIQ_OUTPUT_ROOT"); env && *env) return env;
    return fallback;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

ReweightingMethod method_from_flags(const std::string& name, bool no_calibration, int folds) {
    ReweightingMethod m;
    m.name = parse_method(name);
    m.calibrate = !no_calibration;
    m.calibration_folds = folds;
    return m;
}

GBTParams learner_from_flags(int rounds, double lr, int leaves, int min_leaf) {
    GBTParams p;
    p.n_rounds = rounds;
    p.learning_rate = lr;
    p.max_leaf_nodes = leaves;
    p.min_samples_leaf = min_leaf;
    p.validate();
    return p;
}

// Writes per-dataset and pooled summaries plus all summary plots.
void summarize_root(const fs::path& root, double alpha) {
    const auto records = collect_runs(root);
    if (records.empty()) throw ArgumentError("no runs found under " + root.string());
    const auto all = summarize(records, alpha);
    write_summary(all, root / "summary");
    std::map<std::string, std::vector<RunRecord>> per_dataset;
    for (const auto& r : records) per_dataset[r.dataset].push_back(r);
    for (const auto& [name, recs] : per_dataset) write_summary(summarize(recs, alpha), root / name / "summary");
    std::cout << "summarized " << records.size() << " runs from " << per_dataset.size() << " dataset(s) into " << (root / "summary")
              << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Biquality learning: reweighting, corruption and benchmark harness"};
    app.require_subcommand(1);
    std::string output;
    app.add_option("-o,--output", output, "Output root (default: $BIQ_OUTPUT_ROOT, then ./results)");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Validate a CSV dataset and store it under the output root");
    std::string ingest_path;
    std::string ingest_label = "label";
    std::string ingest_name;
    ingest->add_option("data", ingest_path, "CSV file")->required()->check(CLI::ExistingFile);
    ingest->add_option("--label", ingest_label, "Label column");
    ingest->add_option("--name", ingest_name, "Dataset name (default: file stem)");

    // corrupt
    auto* corrupt = app.add_subcommand("corrupt", "Apply concept drift and/or class-conditional shift to a dataset");
    std::string corrupt_in;
    std::string corrupt_out;
    std::string corrupt_label = "label";
    std::string audit_path;
    double corrupt_r = 0.0;
    double corrupt_rho = 1.0;
    double min_leaf_fraction = 0.10;
    std::uint64_t corrupt_seed = 0;
    corrupt->add_option("data", corrupt_in, "Input CSV")->required()->check(CLI::ExistingFile);
    corrupt->add_option("--out", corrupt_out, "Output CSV")->required();
    corrupt->add_option("--label", corrupt_label, "Label column");
    corrupt->add_option("--r", corrupt_r, "Concept drift noise fraction")->check(CLI::Range(0.0, 1.0));
    corrupt->add_option("--rho", corrupt_rho, "Class-conditional subsampling factor (>= 1)");
    corrupt->add_option("--min-leaf-fraction", min_leaf_fraction, "Tree leaf size as a fraction of rows");
    corrupt->add_option("--seed", corrupt_seed, "Seed");
    corrupt->add_option("--audit", audit_path, "Audit JSON path (default: <out>.audit.json)");

    // weights
    auto* weights = app.add_subcommand("weights", "Compute untrusted sample weights for a reweighting method");
    std::string w_trusted;
    std::string w_untrusted;
    std::string w_label = "label";
    std::string w_method = "IRBL";
    std::string w_out;
    std::uint64_t w_seed = 0;
    bool w_no_cal = false;
    int w_folds = 3;
    int rounds = 100;
    double lr = 0.1;
    int leaves = 31;
    int min_leaf = 20;
    weights->add_option("--trusted", w_trusted, "Trusted CSV")->required()->check(CLI::ExistingFile);
    weights->add_option("--untrusted", w_untrusted, "Untrusted CSV")->required()->check(CLI::ExistingFile);
    weights->add_option("--label", w_label, "Label column");
    weights->add_option("--method", w_method, "IRBL, IRBL2, PDR, K-PDR, K-KMM, NoCorrection or TrustedOnly");
    weights->add_option("--out", w_out, "Weights CSV")->required();
    weights->add_option("--seed", w_seed, "Seed");
    weights->add_flag("--no-calibration", w_no_cal, "Use raw probabilities");
    weights->add_option("--calibration-folds", w_folds, "Cross-fitting folds for calibration");
    weights->add_option("--rounds", rounds, "Boosting rounds");
    weights->add_option("--learning-rate", lr, "Boosting learning rate");
    weights->add_option("--max-leaf-nodes", leaves, "Leaves per tree");
    weights->add_option("--min-samples-leaf", min_leaf, "Minimum rows per leaf");

    // run
    auto* run = app.add_subcommand("run", "Run the experiment grid from a JSON or TOML config");
    std::string config_path;
    int parallelism = 0;
    bool verbose = false;
    run->add_option("config", config_path, "Config file")->required();
    run->add_option("-j,--parallelism", parallelism, "Worker threads (overrides config)");
    run->add_flag("-v,--verbose", verbose, "Log every finished run");

    // summarize
    auto* summ = app.add_subcommand("summarize", "AUC tables, Friedman/Nemenyi and Wilcoxon grids from runs.csv files");
    double alpha = 0.05;
    summ->add_option("--alpha", alpha, "Significance level");

    // plot
    auto* plot = app.add_subcommand("plot", "Render SVG plots");
    std::string kind_name;
    std::string p_trusted;
    std::string p_untrusted;
    std::string p_weights;
    std::string p_out;
    std::string p_label = "label";
    double p_alpha = 0.05;
    plot->add_option("kind", kind_name, "curves, cd-diagram, wilcoxon-grid or toy-weights")
        ->required()
        ->check(CLI::IsMember({"curves", "cd-diagram", "wilcoxon-grid", "toy-weights"}));
    plot->add_option("--alpha", p_alpha, "Significance level for tests");
    plot->add_option("--trusted", p_trusted, "toy-weights: trusted CSV");
    plot->add_option("--untrusted", p_untrusted, "toy-weights: untrusted CSV");
    plot->add_option("--weights", p_weights, "toy-weights: weights CSV");
    plot->add_option("--label", p_label, "toy-weights: label column");
    plot->add_option("--out", p_out, "toy-weights: SVG path");

    // make-moons
    auto* moons = app.add_subcommand("make-moons", "Write a two-moons dataset");
    std::size_t m_n = 1000;
    double m_noise = 0.2;
    std::uint64_t m_seed = 0;
    std::string m_out;
    moons->add_option("--n", m_n, "Rows");
    moons->add_option("--noise", m_noise, "Gaussian noise standard deviation");
    moons->add_option("--seed", m_seed, "Seed");
    moons->add_option("--out", m_out, "CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (ingest->parsed()) {
            const auto d = load_csv(ingest_path, ingest_label);
            const std::string name = ingest_name.empty() ? fs::path(ingest_path).stem().string() : ingest_name;
            const auto dir = output_root(output, "results") / name;
            fs::create_directories(dir);
            save_csv(dir / "dataset.csv", d, ingest_label);
            auto meta = dataset_metadata(d, ingest_label);
            meta["source"] = ingest_path;
            write_json(dir / "metadata.json", meta);
            std::cout << meta.dump(2) << '\n';
            return kExitOk;
        }
        if (corrupt->parsed()) {
            if (!(corrupt_rho >= 1.0)) throw ArgumentError("--rho must be >= 1");
            Dataset d = load_csv(corrupt_in, corrupt_label);
            nlohmann::json audit_json;
            const auto perm = PermutationMatrix::random_derangement(d.n_classes(), derive_seed(corrupt_seed, "permutation"));
            audit_json["permutation"] = perm.mapping();
            if (corrupt_r > 0.0) {
                auto [out, audit] = inject_concept_drift(d, {corrupt_r, min_leaf_fraction, perm, derive_seed(corrupt_seed, "drift")});
                audit_json["concept_drift"] = to_json(audit);
                d = std::move(out);
            }
            if (corrupt_rho > 1.0) {
                ClassConditionalSpec spec;
                spec.rho = corrupt_rho;
                spec.seed = derive_seed(corrupt_seed, "subsample");
                auto [out, audit] = inject_class_conditional_shift(d, spec);
                audit_json["class_conditional"] = to_json(audit);
                d = std::move(out);
            }
            save_csv(corrupt_out, d, corrupt_label);
            write_json(audit_path.empty() ? fs::path(corrupt_out + ".audit.json") : fs::path(audit_path), audit_json);
            std::cout << "wrote " << d.size() << " rows to " << corrupt_out << '\n';
            return kExitOk;
        }
        if (weights->parsed()) {
            const auto t = load_csv(w_trusted, w_label);
            const auto u = load_csv(w_untrusted, w_label);
            const BiqualityDataset biq(t, u);
            const auto method = method_from_flags(w_method, w_no_cal, w_folds);
            const auto w = compute_weights(biq, method, make_gbt_factory(learner_from_flags(rounds, lr, leaves, min_leaf)), w_seed);
            if (fs::path(w_out).has_parent_path()) fs::create_directories(fs::path(w_out).parent_path());
            std::ofstream out(w_out);
            write_weights_csv(out, w.untrusted);
            for (const auto& f : w.flags) std::cerr << "flag: " << f << '\n';
            std::cout << "mean untrusted weight " << w.untrusted.mean() << " over " << w.untrusted.size() << " rows\n";
            return kExitOk;
        }
        if (run->parsed()) {
            auto cfg = load_config(config_path);
            cfg.output_dir = output_root(output, cfg.output_dir);
            if (parallelism > 0) cfg.parallelism = parallelism;
            cfg.validate();
            const auto report = run_experiment(cfg, verbose ? &std::cout : nullptr);
            std::cout << "executed " << report.executed << ", skipped " << report.skipped << ", failed " << report.failed << '\n';
            for (const auto& f : report.runs_files) std::cout << "  " << f.string() << '\n';
            return report.failed > 0 ? kExitPartial : kExitOk;
        }
        if (summ->parsed()) {
            summarize_root(output_root(output, "results"), alpha);
            return kExitOk;
        }
        if (plot->parsed()) {
            const auto root = output_root(output, "results");
            const auto kind = parse_plot_kind(kind_name);
            if (kind == PlotKind::ToyWeights) {
                if (p_trusted.empty() || p_untrusted.empty() || p_weights.empty()) {
                    throw ArgumentError("toy-weights needs --trusted, --untrusted and --weights");
                }
                const auto t = load_csv(p_trusted, p_label);
                const auto u = load_csv(p_untrusted, p_label);
                std::ifstream win(p_weights);
                if (!win) throw ArgumentError("cannot open " + p_weights);
                const auto w = read_weights_csv(win);
                const fs::path target = p_out.empty() ? root / "plots" / "toy_weights.svg" : fs::path(p_out);
                save_svg(target, plot_toy_weights(t, u, w));
                std::cout << target.string() << '\n';
                return kExitOk;
            }
            const auto records = collect_runs(root);
            if (records.empty()) throw ArgumentError("no runs found under " + root.string());
            const auto written = plot_summary(summarize(records, p_alpha), root / "plots", kind);
            std::map<std::string, std::vector<RunRecord>> per_dataset;
            for (const auto& r : records) per_dataset[r.dataset].push_back(r);
            std::vector<fs::path> all = written;
            if (kind == PlotKind::Curves) {
                for (const auto& [name, recs] : per_dataset) {
                    const auto more = plot_summary(summarize(recs, p_alpha), root / name / "plots", kind);
                    all.insert(all.end(), more.begin(), more.end());
                }
            }
            if (all.empty()) std::cerr << "nothing to plot for " << kind_name << '\n';
            for (const auto& f : all) std::cout << f.string() << '\n';
            return kExitOk;
        }
        if (moons->parsed()) {
            save_csv(m_out, make_two_moons(m_n, m_noise, m_seed));
            std::cout << "wrote " << m_n << " rows to " << m_out << '\n';
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    return kExitOk;
}
