#pragma once

// Histogram-based gradient boosted trees for multiclass classification.
// One regression tree per class per round is fitted on the softmax
// gradients/hessians; trees grow leaf-wise (best gain first) over features
// quantized into at most max_bins bins. Sample weights scale gradients and
// hessians, so multiplying all weights by a constant leaves the model
// unchanged.

#include "biquality/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <queue>
#include <vector>

namespace biq {

struct GBTParams {
    int n_rounds = 100;
    double learning_rate = 0.1;
    int max_bins = 255;
    std::optional<int> max_depth;
    int max_leaf_nodes = 31;
    std::size_t min_samples_leaf = 20;
    double l2_regularization = 0.0;
    double min_hessian_to_split = 1e-3;

    void validate() const {
        if (n_rounds < 1) throw ArgumentError("GBTParams: n_rounds must be >= 1");
        if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ArgumentError("GBTParams: learning_rate must be in (0, 1]");
        if (max_bins < 2 || max_bins > 255) throw ArgumentError("GBTParams: max_bins must be in [2, 255]");
        if (max_leaf_nodes < 2) throw ArgumentError("GBTParams: max_leaf_nodes must be >= 2");
        if (min_samples_leaf < 1) throw ArgumentError("GBTParams: min_samples_leaf must be >= 1");
    }
};

inline nlohmann::json to_json(const GBTParams& p) {
    return {{"n_rounds", p.n_rounds},
            {"learning_rate", p.learning_rate},
            {"max_bins", p.max_bins},
            {"max_depth", p.max_depth ? nlohmann::json(*p.max_depth) : nlohmann::json(nullptr)},
            {"max_leaf_nodes", p.max_leaf_nodes},
            {"min_samples_leaf", p.min_samples_leaf},
            {"l2_regularization", p.l2_regularization}};
}

struct RegressionNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

using RegressionTree = std::vector<RegressionNode>;

class GBTModel final : public ProbabilisticModel {
public:
    GBTModel(int n_classes, std::vector<double> baseline, std::vector<std::vector<RegressionTree>> rounds,
             std::vector<double> loss_history)
        : n_classes_(n_classes),
          baseline_(std::move(baseline)),
          rounds_(std::move(rounds)),
          loss_history_(std::move(loss_history)) {}

    int n_classes() const override { return n_classes_; }

    Matrix raw_scores(const Matrix& x) const {
        Matrix raw(x.rows(), n_classes_);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            for (int k = 0; k < n_classes_; ++k) raw(i, k) = baseline_[static_cast<std::size_t>(k)];
        }
        for (const auto& round : rounds_) {
            for (int k = 0; k < n_classes_; ++k) {
                const auto& tree = round[static_cast<std::size_t>(k)];
                for (Eigen::Index i = 0; i < x.rows(); ++i) raw(i, k) += evaluate(tree, x, i);
            }
        }
        return raw;
    }

    Matrix predict_proba(const Matrix& x) const override {
        Matrix p = raw_scores(x);
        for (Eigen::Index i = 0; i < p.rows(); ++i) softmax_row(p, i);
        return p;
    }

    /// Weighted mean multiclass log-loss on the training set after each round.
    const std::vector<double>& loss_history() const { return loss_history_; }
    std::size_t n_rounds() const { return rounds_.size(); }

    nlohmann::json to_json() const override {
        nlohmann::json rounds = nlohmann::json::array();
        for (const auto& round : rounds_) {
            nlohmann::json trees = nlohmann::json::array();
            for (const auto& tree : round) {
                nlohmann::json nodes = nlohmann::json::array();
                for (const auto& nd : tree) {
                    nodes.push_back({{"feature", nd.feature}, {"threshold", nd.threshold},
                                     {"left", nd.left}, {"right", nd.right}, {"value", nd.value}});
                }
                trees.push_back(std::move(nodes));
            }
            rounds.push_back(std::move(trees));
        }
        return {{"type", "gbt"}, {"n_classes", n_classes_}, {"baseline", baseline_}, {"rounds", rounds},
                {"loss_history", loss_history_}};
    }

    static void softmax_row(Matrix& p, Eigen::Index i) {
        const double m = p.row(i).maxCoeff();
        double s = 0.0;
        for (Eigen::Index k = 0; k < p.cols(); ++k) {
            p(i, k) = std::exp(p(i, k) - m);
            s += p(i, k);
        }
        p.row(i) /= s;
    }

private:
    static double evaluate(const RegressionTree& tree, const Matrix& x, Eigen::Index row) {
        int node = 0;
        while (tree[static_cast<std::size_t>(node)].feature >= 0) {
            const auto& nd = tree[static_cast<std::size_t>(node)];
            node = x(row, nd.feature) <= nd.threshold ? nd.left : nd.right;
        }
        return tree[static_cast<std::size_t>(node)].value;
    }

    int n_classes_;
    std::vector<double> baseline_;
    std::vector<std::vector<RegressionTree>> rounds_;
    std::vector<double> loss_history_;
};

namespace detail {

/// Per-feature bin thresholds; a value goes to bin b = #{thresholds < value},
/// so "bin <= b" is equivalent to "value <= thresholds[b]".
struct BinMapper {
    std::vector<std::vector<double>> thresholds;
    std::vector<std::size_t> offsets; // offset of each feature in a flat histogram
    std::size_t total_bins = 0;

    std::size_t n_bins(std::size_t f) const { return thresholds[f].size() + 1; }

    static BinMapper fit(const Matrix& x, int max_bins) {
        BinMapper m;
        const auto n = static_cast<std::size_t>(x.rows());
        std::vector<double> col(n);
        for (Eigen::Index f = 0; f < x.cols(); ++f) {
            for (std::size_t i = 0; i < n; ++i) col[i] = x(static_cast<Eigen::Index>(i), f);
            std::sort(col.begin(), col.end());
            std::vector<double> distinct;
            for (double v : col) {
                if (distinct.empty() || v != distinct.back()) distinct.push_back(v);
            }
            std::vector<double> thr;
            auto midpoint = [](double a, double b) {
                double mid = a + (b - a) / 2.0;
                return mid < b ? mid : a;
            };
            if (distinct.size() <= static_cast<std::size_t>(max_bins)) {
                for (std::size_t i = 0; i + 1 < distinct.size(); ++i) thr.push_back(midpoint(distinct[i], distinct[i + 1]));
            } else {
                // quantile cut points (linear interpolation), deduplicated
                for (int q = 1; q < max_bins; ++q) {
                    const double pos = static_cast<double>(q) / max_bins * static_cast<double>(n - 1);
                    const auto lo = static_cast<std::size_t>(std::floor(pos));
                    const auto hi = std::min(lo + 1, n - 1);
                    const double v = col[lo] + (pos - static_cast<double>(lo)) * (col[hi] - col[lo]);
                    if (thr.empty() || v > thr.back()) thr.push_back(v);
                }
            }
            m.offsets.push_back(m.total_bins);
            m.total_bins += thr.size() + 1;
            m.thresholds.push_back(std::move(thr));
        }
        return m;
    }

    std::uint8_t bin(std::size_t f, double v) const {
        const auto& t = thresholds[f];
        return static_cast<std::uint8_t>(std::lower_bound(t.begin(), t.end(), v) - t.begin());
    }
};

struct HistBin {
    double g = 0.0;
    double h = 0.0;
    std::uint32_t count = 0;
};

struct SplitCandidate {
    double gain = 0.0;
    int feature = -1;
    int bin = -1;
};

struct GrowNode {
    std::vector<std::size_t> rows;
    std::vector<HistBin> hist;
    double g = 0.0;
    double h = 0.0;
    int depth = 0;
    int tree_index = 0;
    SplitCandidate split;
};

class TreeGrower {
public:
    TreeGrower(const BinMapper& bins, const std::vector<std::vector<std::uint8_t>>& binned, const GBTParams& params)
        : bins_(bins), binned_(binned), params_(params) {}

    /// Grows one tree on (g, h); returns nodes and adds lr * leaf value into `raw_col`.
    RegressionTree grow(const std::vector<double>& g, const std::vector<double>& h, std::vector<double>& raw_col) {
        RegressionTree tree(1);
        std::vector<GrowNode> open;
        GrowNode root;
        root.rows = iota_indices(g.size());
        root.hist = build_hist(root.rows, g, h);
        for (auto r : root.rows) {
            root.g += g[r];
            root.h += h[r];
        }
        root.split = best_split(root);
        open.push_back(std::move(root));

        auto cmp = [&open](std::size_t a, std::size_t b) {
            if (open[a].split.gain != open[b].split.gain) return open[a].split.gain < open[b].split.gain;
            return open[a].tree_index > open[b].tree_index;
        };
        std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(cmp)> queue(cmp);
        std::vector<std::size_t> finished;
        auto consider = [&](std::size_t idx) {
            if (open[idx].split.feature >= 0) {
                queue.push(idx);
            } else {
                finished.push_back(idx);
            }
        };
        consider(0);
        int n_leaves = 1;
        while (!queue.empty() && n_leaves < params_.max_leaf_nodes) {
            const std::size_t idx = queue.top();
            queue.pop();
            const auto split = open[idx].split;
            const auto f = static_cast<std::size_t>(split.feature);
            GrowNode left;
            GrowNode right;
            for (auto r : open[idx].rows) {
                if (binned_[f][r] <= split.bin) {
                    left.rows.push_back(r);
                    left.g += g[r];
                    left.h += h[r];
                } else {
                    right.rows.push_back(r);
                    right.g += g[r];
                    right.h += h[r];
                }
            }
            // histogram subtraction: build the smaller child, derive the larger
            GrowNode& small = left.rows.size() <= right.rows.size() ? left : right;
            GrowNode& large = left.rows.size() <= right.rows.size() ? right : left;
            small.hist = build_hist(small.rows, g, h);
            large.hist = open[idx].hist;
            for (std::size_t b = 0; b < large.hist.size(); ++b) {
                large.hist[b].g -= small.hist[b].g;
                large.hist[b].h -= small.hist[b].h;
                large.hist[b].count -= small.hist[b].count;
            }
            open[idx].hist.clear();
            open[idx].hist.shrink_to_fit();

            auto& tn = tree[static_cast<std::size_t>(open[idx].tree_index)];
            tn.feature = split.feature;
            tn.threshold = bins_.thresholds[f][static_cast<std::size_t>(split.bin)];
            tn.left = static_cast<int>(tree.size());
            tn.right = static_cast<int>(tree.size() + 1);
            left.tree_index = tn.left;
            right.tree_index = tn.right;
            tree.emplace_back();
            tree.emplace_back();
            left.depth = right.depth = open[idx].depth + 1;
            open[idx].rows.clear();
            open[idx].rows.shrink_to_fit();
            ++n_leaves;

            left.split = best_split(left);
            right.split = best_split(right);
            open.push_back(std::move(left));
            consider(open.size() - 1);
            open.push_back(std::move(right));
            consider(open.size() - 1);
        }
        while (!queue.empty()) {
            finished.push_back(queue.top());
            queue.pop();
        }
        for (auto idx : finished) {
            const auto& nd = open[idx];
            const double value = -params_.learning_rate * nd.g / (nd.h + params_.l2_regularization + 1e-15);
            tree[static_cast<std::size_t>(nd.tree_index)].value = value;
            for (auto r : nd.rows) raw_col[r] += value;
        }
        return tree;
    }

private:
    std::vector<HistBin> build_hist(const std::vector<std::size_t>& rows, const std::vector<double>& g,
                                    const std::vector<double>& h) const {
        std::vector<HistBin> hist(bins_.total_bins);
        for (std::size_t f = 0; f < binned_.size(); ++f) {
            HistBin* base = hist.data() + bins_.offsets[f];
            const auto& col = binned_[f];
            for (auto r : rows) {
                HistBin& b = base[col[r]];
                b.g += g[r];
                b.h += h[r];
                ++b.count;
            }
        }
        return hist;
    }

    SplitCandidate best_split(const GrowNode& node) const {
        SplitCandidate best;
        if (params_.max_depth && node.depth >= *params_.max_depth) return best;
        if (node.rows.size() < 2 * params_.min_samples_leaf) return best;
        const double lambda = params_.l2_regularization;
        const double parent = node.g * node.g / (node.h + lambda + 1e-15);
        double best_gain = 0.0;
        for (std::size_t f = 0; f < binned_.size(); ++f) {
            const std::size_t nb = bins_.n_bins(f);
            const HistBin* base = node.hist.data() + bins_.offsets[f];
            double gl = 0.0;
            double hl = 0.0;
            std::size_t cl = 0;
            for (std::size_t b = 0; b + 1 < nb; ++b) {
                gl += base[b].g;
                hl += base[b].h;
                cl += base[b].count;
                if (cl < params_.min_samples_leaf) continue;
                const std::size_t cr = node.rows.size() - cl;
                if (cr < params_.min_samples_leaf) break;
                const double hr = node.h - hl;
                if (hl < params_.min_hessian_to_split || hr < params_.min_hessian_to_split) continue;
                const double gr = node.g - gl;
                const double gain = gl * gl / (hl + lambda + 1e-15) + gr * gr / (hr + lambda + 1e-15) - parent;
                if (gain > best_gain + 1e-12 * std::max(1.0, std::abs(best_gain))) {
                    best_gain = gain;
                    best.gain = gain;
                    best.feature = static_cast<int>(f);
                    best.bin = static_cast<int>(b);
                }
            }
        }
        return best;
    }

    const BinMapper& bins_;
    const std::vector<std::vector<std::uint8_t>>& binned_;
    const GBTParams& params_;
};

} // namespace detail

inline std::shared_ptr<const GBTModel> fit_gbt(const TrainingView& data, const GBTParams& params) {
    check_training_view(data);
    params.validate();
    if (const auto kept = drop_zero_weight_rows(data)) return fit_gbt(kept->view(), params);
    const auto n = data.labels.size();
    const int k = data.n_classes;
    const auto kk = static_cast<std::size_t>(k);
    auto weight = [&](std::size_t i) { return data.weights.empty() ? 1.0 : data.weights[i]; };

    auto totals = weighted_class_totals(data.labels, k, data.weights);
    double total_w = 0.0;
    for (double t : totals) total_w += t;
    std::vector<double> baseline(kk, 0.0);
    if (total_w > 0.0) {
        for (std::size_t c = 0; c < kk; ++c) baseline[c] = std::log(std::max(totals[c] / total_w, 1e-15));
    }
    std::vector<std::vector<RegressionTree>> rounds;
    std::vector<double> loss_history;
    if (n == 0 || total_w <= 0.0) {
        return std::make_shared<GBTModel>(k, std::move(baseline), std::move(rounds), std::move(loss_history));
    }

    const auto bins = detail::BinMapper::fit(data.features, params.max_bins);
    std::vector<std::vector<std::uint8_t>> binned(static_cast<std::size_t>(data.features.cols()),
                                                  std::vector<std::uint8_t>(n));
    for (std::size_t f = 0; f < binned.size(); ++f) {
        for (std::size_t i = 0; i < n; ++i) binned[f][i] = bins.bin(f, data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)));
    }

    // raw[c][i]: class-major so each tree updates a contiguous column
    std::vector<std::vector<double>> raw(kk, std::vector<double>(n));
    for (std::size_t c = 0; c < kk; ++c) std::fill(raw[c].begin(), raw[c].end(), baseline[c]);
    std::vector<double> prob(n * kk);
    auto refresh = [&]() {
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double m = raw[0][i];
            for (std::size_t c = 1; c < kk; ++c) m = std::max(m, raw[c][i]);
            double s = 0.0;
            for (std::size_t c = 0; c < kk; ++c) {
                prob[i * kk + c] = std::exp(raw[c][i] - m);
                s += prob[i * kk + c];
            }
            for (std::size_t c = 0; c < kk; ++c) prob[i * kk + c] /= s;
            const double py = prob[i * kk + static_cast<std::size_t>(data.labels[i])];
            loss -= weight(i) * std::log(std::max(py, 1e-300));
        }
        return loss / total_w;
    };
    refresh();

    detail::TreeGrower grower(bins, binned, params);
    for (int round = 0; round < params.n_rounds; ++round) {
        std::vector<RegressionTree> trees;
        trees.reserve(kk);
        // gradients for all classes come from the same (pre-round) probabilities
        std::vector<std::vector<double>> grads(kk, std::vector<double>(n));
        std::vector<std::vector<double>> hess(kk, std::vector<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const double w = weight(i);
            for (std::size_t c = 0; c < kk; ++c) {
                const double p = prob[i * kk + c];
                const double y = static_cast<std::size_t>(data.labels[i]) == c ? 1.0 : 0.0;
                grads[c][i] = w * (p - y);
                hess[c][i] = w * p * (1.0 - p);
            }
        }
        for (std::size_t c = 0; c < kk; ++c) trees.push_back(grower.grow(grads[c], hess[c], raw[c]));
        rounds.push_back(std::move(trees));
        loss_history.push_back(refresh());
    }
    return std::make_shared<GBTModel>(k, std::move(baseline), std::move(rounds), std::move(loss_history));
}

inline LearnerFactory make_gbt_factory(GBTParams params = {}) {
    params.validate();
    return [params](const TrainingView& v) -> ModelPtr { return fit_gbt(v, params); };
}

} // namespace biq
