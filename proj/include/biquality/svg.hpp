#pragma once

// Static SVG rendering for curves, critical-difference diagrams, Wilcoxon
// grids and weighted toy scatter plots.

#include "biquality/data.hpp"
#include "biquality/density_ratio.hpp"
#include "biquality/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace biq {

enum class PlotKind { Curves, CdDiagram, WilcoxonGrid, ToyWeights };

inline PlotKind parse_plot_kind(const std::string& s) {
    if (s == "curves") return PlotKind::Curves;
    if (s == "cd-diagram") return PlotKind::CdDiagram;
    if (s == "wilcoxon-grid") return PlotKind::WilcoxonGrid;
    if (s == "toy-weights") return PlotKind::ToyWeights;
    throw ArgumentError("unknown plot kind '" + s + "'");
}

namespace svg {

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

inline std::string num(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

inline const std::array<const char*, 10>& palette() {
    static const std::array<const char*, 10> p = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return p;
}

class Canvas {
public:
    Canvas(double width, double height) : w_(width), h_(height) {}

    void line(double x1, double y1, double x2, double y2, const std::string& stroke = "black", double width = 1.0) {
        body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
              << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"/>\n";
    }
    void text(double x, double y, const std::string& t, const std::string& anchor = "start", double size = 12, const std::string& cls = "") {
        body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << num(size) << "\" text-anchor=\"" << anchor << "\"";
        if (!cls.empty()) body_ << " class=\"" << cls << "\"";
        body_ << ">" << escape(t) << "</text>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, const std::string& label) {
        body_ << "<polyline class=\"series\" data-label=\"" << escape(label) << "\" fill=\"none\" stroke=\"" << stroke
              << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) body_ << (i ? " " : "") << num(pts[i].first) << ',' << num(pts[i].second);
        body_ << "\"/>\n";
    }
    void circle(double cx, double cy, double r, const std::string& fill, const std::string& cls, double weight) {
        body_ << "<circle class=\"" << cls << "\" cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"" << num(r) << "\" fill=\""
              << fill << "\" fill-opacity=\"0.6\" data-weight=\"" << num(weight) << "\"/>\n";
    }
    void rect(double x, double y, double w, double h, const std::string& fill, const std::string& cls = "", const std::string& stroke = "none") {
        body_ << "<rect";
        if (!cls.empty()) body_ << " class=\"" << cls << "\"";
        body_ << " x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h) << "\" fill=\"" << fill
              << "\" stroke=\"" << stroke << "\"/>\n";
    }

    std::string str() const {
        std::ostringstream out;
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w_) << "\" height=\"" << num(h_) << "\" viewBox=\"0 0 "
            << num(w_) << ' ' << num(h_) << "\" font-family=\"sans-serif\">\n"
            << "<rect x=\"0\" y=\"0\" width=\"" << num(w_) << "\" height=\"" << num(h_) << "\" fill=\"white\"/>\n"
            << body_.str() << "</svg>\n";
        return out.str();
    }

private:
    double w_;
    double h_;
    std::ostringstream body_;
};

} // namespace svg

/// Seed- and dataset-averaged kappa against strength, one polyline per method.
inline std::string plot_curves(const Summary& s, Axis axis, double p) {
    std::map<std::string, std::map<double, std::pair<double, int>>> series;
    std::vector<std::string> order;
    for (const auto& row : s.auc) {
        if (row.axis != axis || row.p != p) continue;
        if (!series.count(row.method)) order.push_back(row.method);
        for (const auto& pt : row.points) {
            auto& acc = series[row.method][pt.strength];
            acc.first += pt.metric;
            acc.second += 1;
        }
    }
    if (series.empty()) throw ArgumentError("plot_curves: no curve data for the requested axis and p");

    double xmin = std::numeric_limits<double>::infinity();
    double xmax = -xmin;
    double ymin = xmin;
    double ymax = -xmin;
    for (const auto& [m, pts] : series) {
        for (const auto& [x, acc] : pts) {
            const double sx = axis_strength(axis, x);
            xmin = std::min(xmin, sx);
            xmax = std::max(xmax, sx);
            ymin = std::min(ymin, acc.first / acc.second);
            ymax = std::max(ymax, acc.first / acc.second);
        }
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    ymin = std::min(ymin, 0.0);
    ymax = std::max(ymax, 1.0);

    const double W = 640;
    const double H = 420;
    const double L = 60;
    const double R = 160;
    const double T = 40;
    const double B = 50;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

    svg::Canvas c(W, H);
    c.line(L, H - B, W - R, H - B);
    c.line(L, T, L, H - B);
    c.text(W / 2, 24, "p = " + format_double(p), "middle", 14, "p-annotation");
    c.text((L + W - R) / 2, H - 12, axis == Axis::R ? "r" : "rho (log scale)", "middle");
    c.text(16, (T + H - B) / 2, "kappa", "middle");
    for (int i = 0; i <= 4; ++i) {
        const double y = ymin + (ymax - ymin) * i / 4.0;
        c.line(L - 4, py(y), L, py(y));
        c.text(L - 6, py(y) + 4, svg::num(y), "end", 10);
    }
    std::set<double> ticks;
    for (const auto& [m, pts] : series) {
        for (const auto& [x, acc] : pts) ticks.insert(x);
    }
    for (double x : ticks) {
        c.line(px(axis_strength(axis, x)), H - B, px(axis_strength(axis, x)), H - B + 4);
        c.text(px(axis_strength(axis, x)), H - B + 16, svg::num(x), "middle", 10);
    }
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& colour = svg::palette()[i % svg::palette().size()];
        std::vector<std::pair<double, double>> pts;
        for (const auto& [x, acc] : series.at(order[i])) pts.emplace_back(px(axis_strength(axis, x)), py(acc.first / acc.second));
        c.polyline(pts, colour, order[i]);
        const double ly = T + 18.0 * static_cast<double>(i);
        c.line(W - R + 12, ly, W - R + 36, ly, colour, 2);
        c.text(W - R + 40, ly + 4, order[i], "start", 11);
    }
    return c.str();
}

inline std::string plot_cd_diagram(const FriedmanSummary& f) {
    if (!f.result) throw ArgumentError("plot_cd_diagram: no Friedman result for this (axis, p)");
    const auto& res = *f.result;
    const int k = static_cast<int>(f.methods.size());
    const double W = 640;
    const double L = 60;
    const double R = 60;
    const double T = 60;
    const double H = T + 30 + 20.0 * k;
    auto px = [&](double rank) { return L + (rank - 1.0) / std::max(1, k - 1) * (W - L - R); };

    svg::Canvas c(W, H);
    c.text(W / 2, 20,
           std::string("axis ") + axis_name(f.axis) + ", p = " + format_double(f.p) + ", CD = " + svg::num(res.critical_difference), "middle",
           13);
    c.line(L, T, W - R, T);
    for (int r = 1; r <= k; ++r) {
        c.line(px(r), T - 5, px(r), T);
        c.text(px(r), T - 8, std::to_string(r), "middle", 10);
    }
    // CD bar
    c.line(L, T - 30, px(1.0 + res.critical_difference), T - 30, "black", 2);
    c.text(L, T - 35, "CD", "start", 10);

    std::vector<std::size_t> order = iota_indices(f.methods.size());
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return res.mean_ranks[a] < res.mean_ranks[b]; });
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto m = order[i];
        const double x = px(res.mean_ranks[m]);
        const double y = T + 20 + 20.0 * static_cast<double>(i);
        c.line(x, T, x, y, "#444");
        const bool left = i < (order.size() + 1) / 2;
        c.line(x, y, left ? L - 10 : W - R + 10, y, "#444");
        c.text(left ? L - 12 : W - R + 12, y + 4, f.methods[m] + " (" + svg::num(res.mean_ranks[m]) + ")", left ? "end" : "start", 11,
               "method");
    }
    // cliques of methods within CD of each other
    double yc = T + 8;
    for (std::size_t i = 0; i < order.size(); ++i) {
        std::size_t j = i;
        while (j + 1 < order.size() && res.mean_ranks[order[j + 1]] - res.mean_ranks[order[i]] <= res.critical_difference) ++j;
        if (j > i && (i == 0 || res.mean_ranks[order[j]] - res.mean_ranks[order[i - 1]] > res.critical_difference)) {
            c.line(px(res.mean_ranks[order[i]]) - 3, yc, px(res.mean_ranks[order[j]]) + 3, yc, "black", 3);
            yc += 5;
        }
    }
    return c.str();
}

inline std::string plot_wilcoxon_grid(const WilcoxonGrid& g) {
    if (g.cells.empty()) throw ArgumentError("plot_wilcoxon_grid: empty grid");
    std::set<double> rs;
    std::set<double> rhos;
    for (const auto& cell : g.cells) {
        rs.insert(cell.r);
        rhos.insert(cell.rho);
    }
    const std::vector<double> rv(rs.begin(), rs.end());
    const std::vector<double> rhov(rhos.begin(), rhos.end());
    const double cell_size = 36;
    const double L = 70;
    const double T = 60;
    const double W = L + cell_size * static_cast<double>(rhov.size()) + 20;
    const double H = T + cell_size * static_cast<double>(rv.size()) + 30;
    svg::Canvas c(W, H);
    c.text(W / 2, 20, g.method_a + " vs " + g.method_b + ", p = " + format_double(g.p), "middle", 13);
    for (std::size_t j = 0; j < rhov.size(); ++j) c.text(L + cell_size * (j + 0.5), T - 8, svg::num(rhov[j]), "middle", 10);
    for (std::size_t i = 0; i < rv.size(); ++i) c.text(L - 8, T + cell_size * (i + 0.5) + 4, svg::num(rv[i]), "end", 10);
    c.text(L - 40, T - 8, "r \\ rho", "middle", 10);
    for (const auto& cell : g.cells) {
        const auto i = static_cast<double>(std::distance(rv.begin(), std::find(rv.begin(), rv.end(), cell.r)));
        const auto j = static_cast<double>(std::distance(rhov.begin(), std::find(rhov.begin(), rhov.end(), cell.rho)));
        const char* fill = cell.outcome == Outcome::Win ? "#c7e9c0" : cell.outcome == Outcome::Loss ? "#fcbba1" : "#f0f0f0";
        c.rect(L + cell_size * j, T + cell_size * i, cell_size, cell_size, fill, "cell", "#999");
        c.text(L + cell_size * (j + 0.5), T + cell_size * (i + 0.5) + 6, outcome_symbol(cell.outcome), "middle", 18, outcome_name(cell.outcome));
    }
    return c.str();
}

/// Trusted rows as squares, untrusted rows as circles whose area is
/// proportional to their weight.
inline std::string plot_toy_weights(const Dataset& trusted, const Dataset& untrusted, const WeightVector& w) {
    if (trusted.n_features() != 2 || untrusted.n_features() != 2) throw ArgumentError("plot_toy_weights: needs exactly 2 features");
    if (w.size() != untrusted.size()) throw ArgumentError("plot_toy_weights: weight count does not match untrusted rows");
    if (trusted.size() + untrusted.size() == 0) throw ArgumentError("plot_toy_weights: no points");
    double xmin = std::numeric_limits<double>::infinity();
    double xmax = -xmin;
    double ymin = xmin;
    double ymax = -xmin;
    for (const Dataset* d : {&trusted, &untrusted}) {
        for (Eigen::Index i = 0; i < d->features().rows(); ++i) {
            xmin = std::min(xmin, d->features()(i, 0));
            xmax = std::max(xmax, d->features()(i, 0));
            ymin = std::min(ymin, d->features()(i, 1));
            ymax = std::max(ymax, d->features()(i, 1));
        }
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    double wmax = 0.0;
    for (double v : w) wmax = std::max(wmax, v);
    const double W = 600;
    const double H = 600;
    const double M = 30;
    const double max_radius = 10.0;
    auto px = [&](double x) { return M + (x - xmin) / (xmax - xmin) * (W - 2 * M); };
    auto py = [&](double y) { return H - M - (y - ymin) / (ymax - ymin) * (H - 2 * M); };
    svg::Canvas c(W, H);
    for (Eigen::Index i = 0; i < untrusted.features().rows(); ++i) {
        const double wi = w[static_cast<std::size_t>(i)];
        const double r = wmax > 0.0 ? max_radius * std::sqrt(wi / wmax) : 0.0;
        const auto colour = svg::palette()[static_cast<std::size_t>(untrusted.labels()[static_cast<std::size_t>(i)]) % svg::palette().size()];
        c.circle(px(untrusted.features()(i, 0)), py(untrusted.features()(i, 1)), r, colour, "untrusted", wi);
    }
    for (Eigen::Index i = 0; i < trusted.features().rows(); ++i) {
        const auto colour = svg::palette()[static_cast<std::size_t>(trusted.labels()[static_cast<std::size_t>(i)]) % svg::palette().size()];
        c.rect(px(trusted.features()(i, 0)) - 4, py(trusted.features()(i, 1)) - 4, 8, 8, colour, "trusted", "black");
    }
    return c.str();
}

/// Writes `content` to `path`, creating parent directories.
inline void save_svg(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
}

/// Renders every curve, CD diagram and Wilcoxon grid available in `s` into
/// `dir`; returns the written paths.
inline std::vector<std::filesystem::path> plot_summary(const Summary& s, const std::filesystem::path& dir, PlotKind kind) {
    std::vector<std::filesystem::path> written;
    auto tag = [](double v) { return format_double(v); };
    if (kind == PlotKind::Curves) {
        std::set<std::pair<int, double>> keys;
        for (const auto& row : s.auc) keys.insert({row.axis == Axis::R ? 0 : 1, row.p});
        for (const auto& [a, p] : keys) {
            const Axis axis = a == 0 ? Axis::R : Axis::Rho;
            const auto path = dir / ("curves_" + std::string(axis_name(axis)) + "_p" + tag(p) + ".svg");
            save_svg(path, plot_curves(s, axis, p));
            written.push_back(path);
        }
    } else if (kind == PlotKind::CdDiagram) {
        for (const auto& f : s.friedman) {
            if (!f.result) continue;
            const auto path = dir / ("cd_" + std::string(axis_name(f.axis)) + "_p" + tag(f.p) + ".svg");
            save_svg(path, plot_cd_diagram(f));
            written.push_back(path);
        }
    } else if (kind == PlotKind::WilcoxonGrid) {
        for (const auto& g : s.wilcoxon) {
            if (g.cells.empty()) continue;
            const auto path = dir / ("wilcoxon_" + g.method_a + "_vs_" + g.method_b + "_p" + tag(g.p) + ".svg");
            save_svg(path, plot_wilcoxon_grid(g));
            written.push_back(path);
        }
    } else {
        throw ArgumentError("plot_summary: toy-weights needs a dataset and weights");
    }
    return written;
}

} // namespace biq
