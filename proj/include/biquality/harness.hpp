#pragma once

// Experiment grid runner: splits, trusted-ratio calibration, corruption,
// per-method training and kappa evaluation, with resumable CSV persistence.

#include "biquality/corruption.hpp"
#include "biquality/data.hpp"
#include "biquality/evalstat.hpp"
#include "biquality/gbt.hpp"
#include "biquality/reweighting.hpp"
#include "biquality/trusted_ratio.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace biq {

struct ConfigError : Error {
    using Error::Error;
};

struct DatasetSource {
    std::string name;
    std::filesystem::path path;
    std::string label_column = "label";
};

enum class GridMode {
    Cross, // every (r, rho) pair
    Axes   // (r, 1) for every r plus (0, rho) for every rho
};

struct ExperimentConfig {
    std::vector<DatasetSource> datasets;
    std::vector<double> p_values = {0.25, 0.5, 0.75};
    std::vector<double> r_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    std::vector<double> rho_grid = {1, 2, 5, 10, 20, 50, 100};
    GridMode grid_mode = GridMode::Cross;
    std::vector<ReweightingMethod> methods;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    std::filesystem::path output_dir = "results";
    int parallelism = 1;
    GBTParams learner;
    double test_fraction = 0.2;
    std::vector<double> trusted_ratio_grid = default_trusted_ratio_grid();
    /// Largest trusted fraction used for splitting; keeps the untrusted part non-empty.
    double max_trusted_ratio = 0.9;
    double min_leaf_fraction_per_class = 0.10;
    int k_min = 2;
    int k_max = 10;
    double alpha = 0.05;
    std::uint64_t base_seed = 0;

    void validate() const {
        if (datasets.empty()) throw ConfigError("config: no datasets");
        if (p_values.empty() || r_grid.empty() || rho_grid.empty()) throw ConfigError("config: grids must be non-empty");
        if (methods.empty()) throw ConfigError("config: no methods");
        if (seeds.empty()) throw ConfigError("config: no seeds");
        for (double p : p_values) {
            if (!(p > 0.0 && p <= 1.0)) throw ConfigError("config: p values must be in (0, 1]");
        }
        for (double r : r_grid) {
            if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("config: r values must be in [0, 1]");
        }
        for (double rho : rho_grid) {
            if (!(rho >= 1.0)) throw ConfigError("config: rho values must be >= 1");
        }
        if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("config: test_fraction must be in (0, 1)");
        if (!(max_trusted_ratio > 0.0 && max_trusted_ratio < 1.0)) throw ConfigError("config: max_trusted_ratio must be in (0, 1)");
        if (parallelism < 1) throw ConfigError("config: parallelism must be >= 1");
        std::set<std::string> names;
        for (const auto& d : datasets) {
            if (d.name.empty()) throw ConfigError("config: dataset without a name");
            if (!names.insert(d.name).second) throw ConfigError("config: duplicate dataset name '" + d.name + "'");
        }
        try {
            learner.validate();
        } catch (const ArgumentError& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    }

    /// (r, rho) cells in grid order.
    std::vector<std::pair<double, double>> cells() const {
        std::vector<std::pair<double, double>> out;
        if (grid_mode == GridMode::Cross) {
            for (double r : r_grid) {
                for (double rho : rho_grid) out.emplace_back(r, rho);
            }
            return out;
        }
        for (double r : r_grid) out.emplace_back(r, 1.0);
        for (double rho : rho_grid) {
            if (rho != 1.0) out.emplace_back(0.0, rho);
        }
        return out;
    }
};

namespace detail {

template <class T>
T json_or(const nlohmann::json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

inline ReweightingMethod method_from_json(const nlohmann::json& j) {
    ReweightingMethod m;
    if (j.is_string()) {
        m.name = parse_method(j.get<std::string>());
        return m;
    }
    m.name = parse_method(j.at("name").get<std::string>());
    m.calibrate = json_or(j, "calibrate", m.calibrate);
    m.calibration_folds = json_or(j, "calibration_folds", m.calibration_folds);
    if (j.contains("kmm")) {
        const auto& k = j.at("kmm");
        if (k.contains("gamma")) m.kmm.gamma = k.at("gamma").get<double>();
        if (k.contains("epsilon")) m.kmm.epsilon = k.at("epsilon").get<double>();
        m.kmm.upper_bound = json_or(k, "B", m.kmm.upper_bound);
        m.kmm.batch_size = json_or(k, "batch_size", m.kmm.batch_size);
        m.kmm.max_iters = json_or(k, "max_iters", m.kmm.max_iters);
        m.kmm.tolerance = json_or(k, "tolerance", m.kmm.tolerance);
    }
    return m;
}

inline nlohmann::json method_to_json(const ReweightingMethod& m) {
    nlohmann::json j = {{"name", std::string(method_name(m.name))},
                        {"calibrate", m.calibrate},
                        {"calibration_folds", m.calibration_folds}};
    if (m.name == Method::KKMM) {
        j["kmm"] = {{"B", m.kmm.upper_bound},
                    {"batch_size", m.kmm.batch_size},
                    {"max_iters", m.kmm.max_iters},
                    {"tolerance", m.kmm.tolerance}};
        if (m.kmm.gamma) j["kmm"]["gamma"] = *m.kmm.gamma;
        if (m.kmm.epsilon) j["kmm"]["epsilon"] = *m.kmm.epsilon;
    }
    return j;
}

} // namespace detail

/// Parses a JSON config. Relative dataset paths resolve against `base_dir`.
inline ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    using detail::json_or;
    ExperimentConfig c;
    try {
        for (const auto& d : j.at("datasets")) {
            DatasetSource s;
            s.path = d.at("path").get<std::string>();
            if (s.path.is_relative() && !base_dir.empty()) s.path = base_dir / s.path;
            s.name = json_or<std::string>(d, "name", s.path.stem().string());
            s.label_column = json_or<std::string>(d, "label_column", s.label_column);
            c.datasets.push_back(std::move(s));
        }
        c.p_values = json_or(j, "p_values", c.p_values);
        c.r_grid = json_or(j, "r_grid", c.r_grid);
        c.rho_grid = json_or(j, "rho_grid", c.rho_grid);
        const auto mode = json_or<std::string>(j, "grid_mode", "cross");
        if (mode == "cross") {
            c.grid_mode = GridMode::Cross;
        } else if (mode == "axes") {
            c.grid_mode = GridMode::Axes;
        } else {
            throw ConfigError("config: grid_mode must be 'cross' or 'axes'");
        }
        if (j.contains("methods")) {
            for (const auto& m : j.at("methods")) c.methods.push_back(detail::method_from_json(m));
        } else {
            for (Method m : kAllMethods) {
                ReweightingMethod rm;
                rm.name = m;
                c.methods.push_back(rm);
            }
        }
        c.seeds = json_or(j, "seeds", c.seeds);
        c.output_dir = json_or<std::string>(j, "output_dir", c.output_dir.string());
        c.parallelism = json_or(j, "parallelism", c.parallelism);
        c.test_fraction = json_or(j, "test_fraction", c.test_fraction);
        c.trusted_ratio_grid = json_or(j, "trusted_ratio_grid", c.trusted_ratio_grid);
        c.max_trusted_ratio = json_or(j, "max_trusted_ratio", c.max_trusted_ratio);
        c.min_leaf_fraction_per_class = json_or(j, "min_leaf_fraction_per_class", c.min_leaf_fraction_per_class);
        c.k_min = json_or(j, "k_min", c.k_min);
        c.k_max = json_or(j, "k_max", c.k_max);
        c.alpha = json_or(j, "alpha", c.alpha);
        c.base_seed = json_or(j, "base_seed", c.base_seed);
        if (j.contains("learner")) {
            const auto& l = j.at("learner");
            c.learner.n_rounds = json_or(l, "n_rounds", c.learner.n_rounds);
            c.learner.learning_rate = json_or(l, "learning_rate", c.learner.learning_rate);
            c.learner.max_bins = json_or(l, "max_bins", c.learner.max_bins);
            c.learner.max_leaf_nodes = json_or(l, "max_leaf_nodes", c.learner.max_leaf_nodes);
            c.learner.min_samples_leaf = json_or(l, "min_samples_leaf", c.learner.min_samples_leaf);
            c.learner.l2_regularization = json_or(l, "l2_regularization", c.learner.l2_regularization);
            if (l.contains("max_depth") && !l.at("max_depth").is_null()) c.learner.max_depth = l.at("max_depth").get<int>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const ArgumentError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json datasets = nlohmann::json::array();
    for (const auto& d : c.datasets) datasets.push_back({{"name", d.name}, {"path", d.path.string()}, {"label_column", d.label_column}});
    nlohmann::json methods = nlohmann::json::array();
    for (const auto& m : c.methods) methods.push_back(detail::method_to_json(m));
    return {{"datasets", datasets},
            {"p_values", c.p_values},
            {"r_grid", c.r_grid},
            {"rho_grid", c.rho_grid},
            {"grid_mode", c.grid_mode == GridMode::Cross ? "cross" : "axes"},
            {"methods", methods},
            {"seeds", c.seeds},
            {"output_dir", c.output_dir.string()},
            {"parallelism", c.parallelism},
            {"learner", to_json(c.learner)},
            {"test_fraction", c.test_fraction},
            {"trusted_ratio_grid", c.trusted_ratio_grid},
            {"max_trusted_ratio", c.max_trusted_ratio},
            {"min_leaf_fraction_per_class", c.min_leaf_fraction_per_class},
            {"k_min", c.k_min},
            {"k_max", c.k_max},
            {"alpha", c.alpha},
            {"base_seed", c.base_seed}};
}

struct RunRecord {
    std::string dataset;
    std::string method;
    double p = 0.0;
    double actual_trusted_ratio = 0.0;
    double r = 0.0;
    double rho = 1.0;
    std::uint64_t seed = 0;
    double kappa = std::numeric_limits<double>::quiet_NaN();
    double realized_noise = 0.0;
    double kept_fraction = 1.0;
    std::size_t n_trusted = 0;
    std::size_t n_untrusted = 0;
    std::vector<std::string> flags;
    double wall_time = 0.0;

    bool failed() const { return std::isnan(kappa); }

    using Key = std::tuple<std::string, std::string, double, double, double, std::uint64_t>;
    Key key() const { return {dataset, method, p, r, rho, seed}; }
};

inline const std::vector<std::string>& run_csv_header() {
    static const std::vector<std::string> h = {"dataset",     "method",   "p",          "actual_trusted_ratio",
                                               "r",           "rho",      "seed",       "kappa",
                                               "realized_noise", "kept_fraction", "n_trusted", "n_untrusted",
                                               "flags",       "wall_time"};
    return h;
}

inline std::string join_flags(const std::vector<std::string>& flags) {
    std::string out;
    for (std::size_t i = 0; i < flags.size(); ++i) out += (i ? ";" : "") + flags[i];
    return out;
}

inline void write_run_row(std::ostream& out, const RunRecord& r) {
    out << detail::csv_escape(r.dataset) << ',' << detail::csv_escape(r.method) << ',' << format_double(r.p) << ','
        << format_double(r.actual_trusted_ratio) << ',' << format_double(r.r) << ','
        << format_double(r.rho) << ',' << r.seed << ',' << (r.failed() ? std::string("nan") : format_double(r.kappa))
        << ',' << format_double(r.realized_noise) << ',' << format_double(r.kept_fraction) << ','
        << r.n_trusted << ',' << r.n_untrusted << ',' << detail::csv_escape(join_flags(r.flags)) << ','
        << format_double(r.wall_time) << '\n';
}

inline void write_runs_csv(std::ostream& out, const std::vector<RunRecord>& records) {
    const auto& h = run_csv_header();
    for (std::size_t i = 0; i < h.size(); ++i) out << (i ? "," : "") << h[i];
    out << '\n';
    for (const auto& r : records) write_run_row(out, r);
}

inline std::vector<RunRecord> read_runs_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) return {};
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[detail::trim(header[i])] = i;
    for (const auto& name : run_csv_header()) {
        if (!col.count(name)) throw SchemaError("runs CSV: missing column '" + name + "'");
    }
    std::vector<RunRecord> out;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) throw ParseError("runs CSV row " + std::to_string(row) + ": wrong cell count", row);
        auto num = [&](const char* name) {
            const auto& s = cells[col.at(name)];
            if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
            try {
                return std::stod(s);
            } catch (const std::exception&) {
                throw ParseError("runs CSV row " + std::to_string(row) + ": bad number in " + name, row);
            }
        };
        RunRecord r;
        r.dataset = cells[col.at("dataset")];
        r.method = cells[col.at("method")];
        r.p = num("p");
        r.actual_trusted_ratio = num("actual_trusted_ratio");
        r.r = num("r");
        r.rho = num("rho");
        r.seed = static_cast<std::uint64_t>(std::stoull(cells[col.at("seed")]));
        r.kappa = num("kappa");
        r.realized_noise = num("realized_noise");
        r.kept_fraction = num("kept_fraction");
        r.n_trusted = static_cast<std::size_t>(num("n_trusted"));
        r.n_untrusted = static_cast<std::size_t>(num("n_untrusted"));
        std::stringstream fs(cells[col.at("flags")]);
        std::string f;
        while (std::getline(fs, f, ';')) {
            if (!f.empty()) r.flags.push_back(f);
        }
        r.wall_time = num("wall_time");
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<RunRecord> load_runs_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    return read_runs_csv(in);
}

/// Keeps the last record per key (warning on stderr for each duplicate) and
/// sorts by key.
inline std::vector<RunRecord> deduplicate_runs(const std::vector<RunRecord>& records, std::ostream* warn = &std::cerr) {
    std::map<RunRecord::Key, RunRecord> by_key;
    for (const auto& r : records) {
        auto [it, inserted] = by_key.insert_or_assign(r.key(), r);
        if (!inserted && warn) {
            *warn << "warning: duplicate run key (" << r.dataset << ", " << r.method << ", p=" << r.p << ", r=" << r.r
                  << ", rho=" << r.rho << ", seed=" << r.seed << ") overwritten\n";
        }
    }
    std::vector<RunRecord> out;
    for (auto& [k, r] : by_key) out.push_back(std::move(r));
    return out;
}

struct BenchmarkReport {
    std::vector<RunRecord> records;
    std::size_t executed = 0;
    std::size_t skipped = 0;
    std::size_t failed = 0;
    std::vector<std::filesystem::path> runs_files;
};

namespace detail {

/// Splits, calibrated trusted ratios and permutation for one dataset; shared
/// read-only by every grid cell of that dataset.
struct PreparedDataset {
    DatasetSource source;
    Dataset train;
    Dataset test;
    std::vector<std::size_t> train_rows; // indices into the shuffled dataset
    std::vector<std::size_t> test_rows;
    std::map<double, double> trusted_ratio; // p -> fraction of train
    std::map<double, std::vector<std::string>> ratio_flags;
    PermutationMatrix permutation;
};

inline PreparedDataset prepare_dataset(const DatasetSource& src, const ExperimentConfig& cfg, const std::filesystem::path& dir) {
    const Dataset raw = load_csv(src.path, src.label_column);
    const Dataset shuffled = shuffle_rows(raw, derive_seed(cfg.base_seed, src.name, "shuffle"));
    auto [train_rows, test_rows] =
        stratified_split_indices(shuffled.labels(), shuffled.n_classes(), 1.0 - cfg.test_fraction, derive_seed(cfg.base_seed, src.name, "test_split"));
    PreparedDataset prep{src,
                         shuffled.subset(train_rows),
                         shuffled.subset(test_rows),
                         train_rows,
                         test_rows,
                         {},
                         {},
                         PermutationMatrix::random_derangement(shuffled.n_classes(), derive_seed(cfg.base_seed, src.name, "permutation"))};

    // trusted-ratio cache keyed by p; recomputed when the learner or grid changes
    const auto cache_path = dir / "trusted_ratio.json";
    const nlohmann::json fingerprint = {{"learner", to_json(cfg.learner)},
                                        {"grid", cfg.trusted_ratio_grid},
                                        {"base_seed", cfg.base_seed},
                                        {"test_fraction", cfg.test_fraction}};
    nlohmann::json cache;
    if (std::ifstream in(cache_path); in) {
        try {
            in >> cache;
        } catch (const nlohmann::json::exception&) {
            cache = nlohmann::json();
        }
    }
    if (!cache.is_object() || cache.value("fingerprint", nlohmann::json()) != fingerprint) {
        cache = {{"fingerprint", fingerprint}, {"ratios", nlohmann::json::object()}};
    }
    bool dirty = false;
    for (double p : cfg.p_values) {
        const std::string key = format_double(p);
        if (!cache["ratios"].contains(key)) {
            const auto cal = calibrate_trusted_ratio(prep.train, p, make_gbt_factory(cfg.learner), cfg.trusted_ratio_grid,
                                                     derive_seed(cfg.base_seed, src.name, "trusted_ratio", p));
            cache["ratios"][key] = {{"ratio", cal.ratio}, {"full_kappa", cal.full_kappa}, {"kappas", cal.kappas}, {"flags", cal.flags}};
            dirty = true;
        }
        const auto& entry = cache["ratios"][key];
        double ratio = entry.at("ratio").get<double>();
        auto flags = entry.at("flags").get<std::vector<std::string>>();
        if (ratio > cfg.max_trusted_ratio) {
            ratio = cfg.max_trusted_ratio;
            flags.push_back("trusted_ratio_capped");
        }
        prep.trusted_ratio[p] = ratio;
        prep.ratio_flags[p] = std::move(flags);
    }
    if (dirty) {
        std::ofstream out(cache_path);
        out << cache.dump(2) << '\n';
    }
    return prep;
}

struct CellTask {
    const PreparedDataset* data = nullptr;
    double p = 0.0;
    double r = 0.0;
    double rho = 1.0;
    std::uint64_t seed = 0;
    std::vector<const ReweightingMethod*> methods; // those still missing
};

inline std::vector<RunRecord> run_cell(const CellTask& task, const ExperimentConfig& cfg) {
    const auto& data = *task.data;
    const std::string& name = data.source.name;
    std::vector<RunRecord> out;
    RunRecord base;
    base.dataset = name;
    base.p = task.p;
    base.r = task.r;
    base.rho = task.rho;
    base.seed = task.seed;

    std::optional<BiqualityDataset> biq;
    std::vector<std::string> cell_flags = data.ratio_flags.at(task.p);
    try {
        // trusted split depends on (dataset, p, seed) only, so every (r, rho)
        // cell shares the same trusted rows
        const double ratio = data.trusted_ratio.at(task.p);
        auto [t, u] = stratified_split(data.train, ratio, derive_seed(cfg.base_seed, name, "trusted_split", task.p, task.seed));
        const std::uint64_t cell_seed = derive_seed(cfg.base_seed, name, task.p, task.r, task.rho, task.seed);
        if (task.r > 0.0) {
            auto [drifted, audit] =
                inject_concept_drift(u, {task.r, cfg.min_leaf_fraction_per_class, data.permutation, derive_seed(cell_seed, "drift")});
            base.realized_noise = audit.realized_noise_fraction;
            for (auto& f : audit.flags) cell_flags.push_back(std::move(f));
            u = std::move(drifted);
        }
        if (task.rho > 1.0) {
            ClassConditionalSpec spec;
            spec.rho = task.rho;
            spec.k_min = cfg.k_min;
            spec.k_max = cfg.k_max;
            spec.seed = derive_seed(cell_seed, "subsample");
            auto [shifted, audit] = inject_class_conditional_shift(u, spec);
            base.kept_fraction = audit.kept_fraction;
            for (auto& f : audit.flags) cell_flags.push_back(std::move(f));
            u = std::move(shifted);
        }
        base.actual_trusted_ratio = static_cast<double>(t.size()) / static_cast<double>(data.train.size());
        base.n_trusted = t.size();
        base.n_untrusted = u.size();
        biq.emplace(std::move(t), std::move(u));
    } catch (const std::exception& e) {
        for (const auto* m : task.methods) {
            RunRecord rec = base;
            rec.method = std::string(method_name(m->name));
            rec.flags = cell_flags;
            rec.flags.push_back(std::string("error:") + e.what());
            out.push_back(std::move(rec));
        }
        return out;
    }

    const auto learner = make_gbt_factory(cfg.learner);
    for (const auto* m : task.methods) {
        RunRecord rec = base;
        rec.method = std::string(method_name(m->name));
        rec.flags = cell_flags;
        const auto start = std::chrono::steady_clock::now();
        try {
            const auto trained = train_with_method(*biq, *m, learner, derive_seed(cfg.base_seed, name, task.p, task.r, task.rho, task.seed, rec.method));
            rec.kappa = cohens_kappa(data.test.labels(), trained.model->predict(data.test.features()), data.test.n_classes());
            for (const auto& f : trained.flags) rec.flags.push_back(f);
        } catch (const std::exception& e) {
            rec.kappa = std::numeric_limits<double>::quiet_NaN();
            rec.flags.push_back(std::string("error:") + e.what());
        }
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out.push_back(std::move(rec));
    }
    return out;
}

} // namespace detail

/// Runs the whole grid. Completed (non-failed) keys already present in each
/// dataset's runs.csv are skipped; new records are appended as they finish
/// and the file is rewritten sorted by key at the end.
inline BenchmarkReport run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
    cfg.validate();
    BenchmarkReport report;
    std::filesystem::create_directories(cfg.output_dir);
    {
        std::ofstream out(cfg.output_dir / "config.json");
        out << config_to_json(cfg).dump(2) << '\n';
    }
    for (const auto& src : cfg.datasets) {
        const auto dir = cfg.output_dir / src.name;
        std::filesystem::create_directories(dir);
        const auto runs_path = dir / "runs.csv";
        std::vector<RunRecord> existing;
        if (std::filesystem::exists(runs_path)) existing = deduplicate_runs(load_runs_csv(runs_path));
        std::set<RunRecord::Key> done;
        for (const auto& r : existing) {
            if (!r.failed()) done.insert(r.key());
        }
        // failed records are retried
        std::vector<RunRecord> kept;
        for (auto& r : existing) {
            if (!r.failed()) kept.push_back(std::move(r));
        }

        const auto prep = detail::prepare_dataset(src, cfg, dir);
        {
            std::ofstream out(dir / "split.json");
            out << nlohmann::json({{"train_rows", prep.train_rows}, {"test_rows", prep.test_rows},
                                   {"permutation", prep.permutation.mapping()}, {"trusted_ratio", prep.trusted_ratio}})
                       .dump()
                << '\n';
        }

        std::vector<detail::CellTask> tasks;
        std::set<RunRecord::Key> planned;
        for (double p : cfg.p_values) {
            for (std::uint64_t seed : cfg.seeds) {
                for (auto [r, rho] : cfg.cells()) {
                    detail::CellTask task{&prep, p, r, rho, seed, {}};
                    for (const auto& m : cfg.methods) {
                        const RunRecord::Key key{src.name, std::string(method_name(m.name)), p, r, rho, seed};
                        if (!planned.insert(key).second) {
                            std::cerr << "warning: duplicate run key in config for " << src.name << " / " << method_name(m.name)
                                      << "; later entry overwrites\n";
                        }
                        if (done.count(key)) {
                            ++report.skipped;
                            continue;
                        }
                        task.methods.push_back(&m);
                    }
                    if (!task.methods.empty()) tasks.push_back(std::move(task));
                }
            }
        }

        // rewrite the current state, then append as cells finish
        {
            std::ofstream out(runs_path);
            write_runs_csv(out, kept);
        }
        std::mutex writer;
        std::ofstream append(runs_path, std::ios::app);
        std::vector<RunRecord> fresh;
        std::atomic<std::size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= tasks.size()) return;
                auto recs = detail::run_cell(tasks[i], cfg);
                std::lock_guard<std::mutex> lock(writer);
                for (auto& r : recs) {
                    write_run_row(append, r);
                    if (log) {
                        *log << r.dataset << ' ' << r.method << " p=" << r.p << " r=" << r.r << " rho=" << r.rho << " seed=" << r.seed
                             << " kappa=" << r.kappa << '\n';
                    }
                    fresh.push_back(std::move(r));
                }
                append.flush();
            }
        };
        const int n_workers = std::min<int>(cfg.parallelism, static_cast<int>(std::max<std::size_t>(1, tasks.size())));
        if (n_workers <= 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
            for (auto& t : pool) t.join();
        }
        append.close();

        for (const auto& r : fresh) {
            ++report.executed;
            if (r.failed()) ++report.failed;
        }
        kept.insert(kept.end(), std::make_move_iterator(fresh.begin()), std::make_move_iterator(fresh.end()));
        auto final_records = deduplicate_runs(kept, nullptr);
        {
            std::ofstream out(runs_path);
            write_runs_csv(out, final_records);
        }
        report.runs_files.push_back(runs_path);
        report.records.insert(report.records.end(), final_records.begin(), final_records.end());
    }
    return report;
}

} // namespace biq
