#pragma once

// Aggregation of run records: AUC tables, Friedman/Nemenyi rank data and
// pairwise Wilcoxon grids, written as CSV and JSON.

#include "biquality/evalstat.hpp"
#include "biquality/harness.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace biq {

enum class Axis {
    R,  // concept drift strength at rho = 1
    Rho // class-conditional shift strength at r = 0
};

inline const char* axis_name(Axis a) { return a == Axis::R ? "r" : "rho"; }

/// Strength coordinate used for AUC integration. Rho is integrated on a
/// log10 scale so that 1..100 spreads evenly.
inline double axis_strength(Axis a, double value) { return a == Axis::R ? value : std::log10(value); }

struct AucRow {
    std::string dataset;
    std::string method;
    double p = 0.0;
    Axis axis = Axis::R;
    std::vector<CurvePoint> points; // seed-averaged kappa, strength in raw units
    double auc = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::string> flags;
};

struct AucTableRow {
    std::string method;
    double p = 0.0;
    Axis axis = Axis::R;
    double mean_auc = 0.0;
    std::size_t n_datasets = 0;
};

struct FriedmanSummary {
    Axis axis = Axis::R;
    double p = 0.0;
    std::vector<std::string> methods;
    std::vector<std::string> datasets;
    std::optional<FriedmanResult> result;
    std::vector<std::string> flags;
};

struct WilcoxonCell {
    double r = 0.0;
    double rho = 1.0;
    std::size_t n_pairs = 0;
    double p_value = 1.0;
    Outcome outcome = Outcome::Tie;
    std::vector<std::string> flags;
};

struct WilcoxonGrid {
    std::string method_a;
    std::string method_b;
    double p = 0.0;
    std::vector<WilcoxonCell> cells;
};

struct Summary {
    std::vector<AucRow> auc;
    std::vector<AucTableRow> table;
    std::vector<FriedmanSummary> friedman;
    std::vector<WilcoxonGrid> wilcoxon;
    std::vector<std::string> flags;
};

namespace detail {

using CellKey = std::tuple<std::string, std::string, double, double, double>; // dataset, method, p, r, rho

/// Mean kappa over seeds for every (dataset, method, p, r, rho); failed runs are skipped.
inline std::map<CellKey, double> seed_means(const std::vector<RunRecord>& records) {
    std::map<CellKey, std::pair<double, int>> acc;
    for (const auto& r : records) {
        if (r.failed()) continue;
        auto& a = acc[{r.dataset, r.method, r.p, r.r, r.rho}];
        a.first += r.kappa;
        a.second += 1;
    }
    std::map<CellKey, double> out;
    for (const auto& [k, v] : acc) out[k] = v.first / v.second;
    return out;
}

template <class T>
std::vector<T> sorted_unique(const std::set<T>& s) {
    return {s.begin(), s.end()};
}

// Methods in first-appearance order of the records.
inline std::vector<std::string> method_order(const std::vector<RunRecord>& records) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& r : records) {
        if (seen.insert(r.method).second) out.push_back(r.method);
    }
    return out;
}

} // namespace detail

inline Summary summarize(const std::vector<RunRecord>& records, double alpha = 0.05) {
    if (records.empty()) throw ArgumentError("summarize: no records");
    Summary s;
    const auto means = detail::seed_means(records);
    const auto methods = detail::method_order(records);
    std::set<std::string> dataset_set;
    std::set<double> p_set;
    std::set<double> r_set;
    std::set<double> rho_set;
    std::set<std::pair<double, double>> cell_set;
    for (const auto& r : records) {
        dataset_set.insert(r.dataset);
        p_set.insert(r.p);
        r_set.insert(r.r);
        rho_set.insert(r.rho);
        cell_set.insert({r.r, r.rho});
        if (r.failed()) s.flags.push_back("failed_run:" + r.dataset + "/" + r.method);
    }
    const auto datasets = detail::sorted_unique(dataset_set);
    const auto ps = detail::sorted_unique(p_set);

    // AUC curves
    for (Axis axis : {Axis::R, Axis::Rho}) {
        const auto values = detail::sorted_unique(axis == Axis::R ? r_set : rho_set);
        if (values.size() < 2) continue; // axis not varied
        for (const auto& d : datasets) {
            for (const auto& m : methods) {
                for (double p : ps) {
                    AucRow row{d, m, p, axis, {}, std::numeric_limits<double>::quiet_NaN(), {}};
                    std::vector<CurvePoint> scaled;
                    for (double v : values) {
                        const detail::CellKey key = axis == Axis::R ? detail::CellKey{d, m, p, v, 1.0} : detail::CellKey{d, m, p, 0.0, v};
                        const auto it = means.find(key);
                        if (it == means.end()) {
                            if (cell_set.count(axis == Axis::R ? std::pair{v, 1.0} : std::pair{0.0, v})) {
                                row.flags.push_back(std::string("missing_cell:") + axis_name(axis) + "=" + format_double(v));
                            }
                            continue;
                        }
                        row.points.push_back({v, it->second});
                        scaled.push_back({axis_strength(axis, v), it->second});
                    }
                    if (row.points.empty()) continue;
                    if (scaled.size() >= 2) {
                        row.auc = normalized_auc(scaled);
                    } else {
                        row.flags.push_back("fewer_than_2_points");
                    }
                    s.auc.push_back(std::move(row));
                }
            }
        }
    }

    // average across datasets
    for (Axis axis : {Axis::R, Axis::Rho}) {
        for (const auto& m : methods) {
            for (double p : ps) {
                double total = 0.0;
                std::size_t n = 0;
                for (const auto& row : s.auc) {
                    if (row.axis == axis && row.method == m && row.p == p && !std::isnan(row.auc)) {
                        total += row.auc;
                        ++n;
                    }
                }
                if (n > 0) s.table.push_back({m, p, axis, total / static_cast<double>(n), n});
            }
        }
    }

    // Friedman / Nemenyi per (axis, p); datasets missing any method are dropped
    for (Axis axis : {Axis::R, Axis::Rho}) {
        for (double p : ps) {
            FriedmanSummary f;
            f.axis = axis;
            f.p = p;
            f.methods = methods;
            std::map<std::pair<std::string, std::string>, double> auc;
            for (const auto& row : s.auc) {
                if (row.axis == axis && row.p == p && !std::isnan(row.auc)) auc[{row.dataset, row.method}] = row.auc;
            }
            for (const auto& d : datasets) {
                bool complete = true;
                for (const auto& m : methods) complete = complete && auc.count({d, m});
                if (complete) {
                    f.datasets.push_back(d);
                } else {
                    f.flags.push_back("dataset_excluded_missing_cells:" + d);
                }
            }
            if (methods.size() < 3 || f.datasets.size() < 2) {
                f.flags.push_back("skipped_need_3_methods_and_2_datasets");
            } else {
                std::vector<std::vector<double>> scores(methods.size());
                for (std::size_t i = 0; i < methods.size(); ++i) {
                    for (const auto& d : f.datasets) scores[i].push_back(auc.at({d, methods[i]}));
                }
                f.result = friedman_nemenyi(scores, alpha);
            }
            s.friedman.push_back(std::move(f));
        }
    }

    // pairwise Wilcoxon over datasets per (r, rho) cell
    for (std::size_t a = 0; a < methods.size(); ++a) {
        for (std::size_t b = a + 1; b < methods.size(); ++b) {
            for (double p : ps) {
                WilcoxonGrid g{methods[a], methods[b], p, {}};
                for (const auto& [r, rho] : cell_set) {
                    WilcoxonCell cell;
                    cell.r = r;
                    cell.rho = rho;
                    std::vector<double> xa;
                    std::vector<double> xb;
                    for (const auto& d : datasets) {
                        const auto ia = means.find({d, methods[a], p, r, rho});
                        const auto ib = means.find({d, methods[b], p, r, rho});
                        if (ia == means.end() || ib == means.end()) {
                            if (ia != means.end() || ib != means.end()) cell.flags.push_back("excluded_missing_pair:" + d);
                            continue;
                        }
                        xa.push_back(ia->second);
                        xb.push_back(ib->second);
                    }
                    cell.n_pairs = xa.size();
                    if (xa.empty()) continue;
                    const auto w = wilcoxon_signed_rank(xa, xb, alpha);
                    cell.p_value = w.p_value;
                    cell.outcome = outcome_of(w);
                    for (const auto& fl : w.flags) cell.flags.push_back(fl);
                    g.cells.push_back(std::move(cell));
                }
                s.wilcoxon.push_back(std::move(g));
            }
        }
    }
    return s;
}

inline nlohmann::json to_json(const Summary& s) {
    nlohmann::json auc = nlohmann::json::array();
    for (const auto& row : s.auc) {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& pt : row.points) pts.push_back({pt.strength, pt.metric});
        auc.push_back({{"dataset", row.dataset},
                       {"method", row.method},
                       {"p", row.p},
                       {"axis", axis_name(row.axis)},
                       {"points", pts},
                       {"auc", std::isnan(row.auc) ? nlohmann::json() : nlohmann::json(row.auc)},
                       {"flags", row.flags}});
    }
    nlohmann::json table = nlohmann::json::array();
    for (const auto& t : s.table) {
        table.push_back({{"method", t.method}, {"p", t.p}, {"axis", axis_name(t.axis)}, {"mean_auc", t.mean_auc}, {"n_datasets", t.n_datasets}});
    }
    nlohmann::json friedman = nlohmann::json::array();
    for (const auto& f : s.friedman) {
        nlohmann::json j = {{"axis", axis_name(f.axis)}, {"p", f.p}, {"methods", f.methods}, {"datasets", f.datasets}, {"flags", f.flags}};
        if (f.result) {
            j["statistic"] = f.result->test.statistic;
            j["p_value"] = f.result->test.p_value;
            j["reject"] = f.result->test.decision == Decision::Reject;
            j["chi_square"] = f.result->chi_square;
            j["critical_difference"] = f.result->critical_difference;
            j["mean_ranks"] = f.result->mean_ranks;
        }
        friedman.push_back(std::move(j));
    }
    nlohmann::json wilcoxon = nlohmann::json::array();
    for (const auto& g : s.wilcoxon) {
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& c : g.cells) {
            cells.push_back({{"r", c.r},
                             {"rho", c.rho},
                             {"n_pairs", c.n_pairs},
                             {"p_value", c.p_value},
                             {"outcome", outcome_name(c.outcome)},
                             {"symbol", outcome_symbol(c.outcome)},
                             {"flags", c.flags}});
        }
        wilcoxon.push_back({{"method_a", g.method_a}, {"method_b", g.method_b}, {"p", g.p}, {"cells", cells}});
    }
    return {{"auc", auc}, {"table", table}, {"friedman", friedman}, {"wilcoxon", wilcoxon}, {"flags", s.flags}};
}

inline void write_auc_csv(std::ostream& out, const std::vector<AucRow>& rows) {
    out << "dataset,method,p,axis,auc,n_points,flags\n";
    for (const auto& r : rows) {
        out << detail::csv_escape(r.dataset) << ',' << detail::csv_escape(r.method) << ',' << format_double(r.p) << ','
            << axis_name(r.axis) << ',' << (std::isnan(r.auc) ? std::string("nan") : format_double(r.auc)) << ','
            << r.points.size() << ',' << detail::csv_escape(join_flags(r.flags)) << '\n';
    }
}

inline void write_table_csv(std::ostream& out, const std::vector<AucTableRow>& rows) {
    out << "method,p,axis,mean_auc,n_datasets\n";
    for (const auto& r : rows) {
        out << detail::csv_escape(r.method) << ',' << format_double(r.p) << ',' << axis_name(r.axis) << ','
            << format_double(r.mean_auc) << ',' << r.n_datasets << '\n';
    }
}

inline void write_wilcoxon_csv(std::ostream& out, const std::vector<WilcoxonGrid>& grids) {
    out << "method_a,method_b,p,r,rho,n_pairs,p_value,outcome,flags\n";
    for (const auto& g : grids) {
        for (const auto& c : g.cells) {
            out << detail::csv_escape(g.method_a) << ',' << detail::csv_escape(g.method_b) << ',' << format_double(g.p) << ','
                << format_double(c.r) << ',' << format_double(c.rho) << ',' << c.n_pairs << ',' << format_double(c.p_value) << ','
                << outcome_name(c.outcome) << ',' << detail::csv_escape(join_flags(c.flags)) << '\n';
        }
    }
}

/// Writes summary.json, auc.csv, table.csv and wilcoxon.csv into `dir`.
inline void write_summary(const Summary& s, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "summary.json");
        out << to_json(s).dump(2) << '\n';
    }
    {
        std::ofstream out(dir / "auc.csv");
        write_auc_csv(out, s.auc);
    }
    {
        std::ofstream out(dir / "table.csv");
        write_table_csv(out, s.table);
    }
    {
        std::ofstream out(dir / "wilcoxon.csv");
        write_wilcoxon_csv(out, s.wilcoxon);
    }
}

/// Reads every `<root>/<dataset>/runs.csv`.
inline std::vector<RunRecord> collect_runs(const std::filesystem::path& root) {
    std::vector<RunRecord> all;
    if (!std::filesystem::is_directory(root)) throw Error("not a directory: " + root.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        const auto f = entry.path() / "runs.csv";
        if (entry.is_directory() && std::filesystem::exists(f)) files.push_back(f);
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        auto recs = load_runs_csv(f);
        all.insert(all.end(), recs.begin(), recs.end());
    }
    return all;
}

} // namespace biq
