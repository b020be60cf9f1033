#pragma once

// CART classification tree (weighted Gini, axis-aligned splits). Used as a
// standalone probabilistic learner and as the feature-space partition behind
// concept-drift injection.

#include "biquality/model.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <vector>

namespace biq {

struct TreeParams {
    /// Every leaf keeps at least ceil(min_leaf_fraction * n_rows) rows.
    double min_leaf_fraction_per_class = 0.01;
    std::size_t min_samples_leaf = 1;
    std::optional<int> max_depth;
};

struct TreeNode {
    int feature = -1; // -1 for leaves
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int depth = 0;
    std::vector<double> value;       // normalized weighted class frequencies
    std::vector<std::size_t> counts; // unweighted class counts

    bool is_leaf() const { return feature < 0; }
    std::size_t n_samples() const {
        std::size_t s = 0;
        for (auto c : counts) s += c;
        return s;
    }
    /// Unweighted majority-class share.
    double purity() const {
        const auto n = n_samples();
        return n == 0 ? 0.0 : static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(n);
    }
};

class DecisionTreeModel final : public ProbabilisticModel {
public:
    DecisionTreeModel(std::vector<TreeNode> nodes, int n_classes, bool flagged)
        : nodes_(std::move(nodes)), n_classes_(n_classes), flagged_(flagged) {}

    int n_classes() const override { return n_classes_; }

    Matrix predict_proba(const Matrix& x) const override {
        Matrix p(x.rows(), n_classes_);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const auto& v = nodes_[static_cast<std::size_t>(leaf_of(x, i))].value;
            for (int k = 0; k < n_classes_; ++k) p(i, k) = v[static_cast<std::size_t>(k)];
        }
        return p;
    }

    /// Node id of the leaf each row falls into.
    std::vector<int> apply(const Matrix& x) const {
        std::vector<int> out(static_cast<std::size_t>(x.rows()));
        for (Eigen::Index i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] = leaf_of(x, i);
        return out;
    }

    const std::vector<TreeNode>& nodes() const { return nodes_; }

    std::vector<int> leaf_ids() const {
        std::vector<int> ids;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].is_leaf()) ids.push_back(static_cast<int>(i));
        }
        return ids;
    }

    /// True when the leaf-size constraint prevented any split of an impure root.
    bool flagged_single_leaf() const { return flagged_; }

    nlohmann::json to_json() const override {
        return {{"type", "decision_tree"}, {"n_classes", n_classes_}, {"flagged_single_leaf", flagged_},
                {"root", node_json(0)}};
    }

private:
    int leaf_of(const Matrix& x, Eigen::Index row) const {
        int node = 0;
        while (!nodes_[static_cast<std::size_t>(node)].is_leaf()) {
            const auto& nd = nodes_[static_cast<std::size_t>(node)];
            node = x(row, nd.feature) <= nd.threshold ? nd.left : nd.right;
        }
        return node;
    }

    nlohmann::json node_json(int id) const {
        const auto& nd = nodes_[static_cast<std::size_t>(id)];
        nlohmann::json j{{"value", nd.value}, {"counts", nd.counts}};
        if (!nd.is_leaf()) {
            j["feature"] = nd.feature;
            j["threshold"] = nd.threshold;
            j["left"] = node_json(nd.left);
            j["right"] = node_json(nd.right);
        }
        return j;
    }

    std::vector<TreeNode> nodes_;
    int n_classes_;
    bool flagged_;
};

namespace detail {

inline double gini(const std::vector<double>& w, double total) {
    if (total <= 0.0) return 0.0;
    double s = 0.0;
    for (double v : w) s += (v / total) * (v / total);
    return 1.0 - s;
}

} // namespace detail

inline std::shared_ptr<const DecisionTreeModel> fit_decision_tree(const TrainingView& data, const TreeParams& params) {
    check_training_view(data);
    if (!(params.min_leaf_fraction_per_class > 0.0)) throw ArgumentError("min_leaf_fraction must be > 0");
    if (const auto kept = drop_zero_weight_rows(data)) return fit_decision_tree(kept->view(), params);
    const auto n = data.labels.size();
    const auto k = static_cast<std::size_t>(data.n_classes);
    const Matrix& x = data.features;
    auto weight = [&](std::size_t i) { return data.weights.empty() ? 1.0 : data.weights[i]; };

    const auto min_leaf = std::max<std::size_t>(
        params.min_samples_leaf,
        static_cast<std::size_t>(std::ceil(params.min_leaf_fraction_per_class * static_cast<double>(n) - 1e-9)));

    std::vector<TreeNode> nodes;
    struct Pending {
        int node;
        std::vector<std::size_t> rows;
    };

    auto make_node = [&](const std::vector<std::size_t>& rows, int depth) {
        TreeNode nd;
        nd.depth = depth;
        nd.value.assign(k, 0.0);
        nd.counts.assign(k, 0);
        for (auto r : rows) {
            const auto y = static_cast<std::size_t>(data.labels[r]);
            nd.value[y] += weight(r);
            ++nd.counts[y];
        }
        double total = 0.0;
        for (double v : nd.value) total += v;
        if (total > 0.0) {
            for (double& v : nd.value) v /= total;
        } else if (!rows.empty()) {
            for (std::size_t c = 0; c < k; ++c) nd.value[c] = static_cast<double>(nd.counts[c]) / static_cast<double>(rows.size());
        } else {
            nd.value.assign(k, 1.0 / static_cast<double>(k));
        }
        nodes.push_back(std::move(nd));
        return static_cast<int>(nodes.size() - 1);
    };

    std::vector<std::size_t> all = iota_indices(n);
    std::vector<Pending> stack;
    stack.push_back({make_node(all, 0), std::move(all)});
    bool root_blocked = false;

    while (!stack.empty()) {
        Pending cur = std::move(stack.back());
        stack.pop_back();
        const int depth = nodes[static_cast<std::size_t>(cur.node)].depth;
        auto& rows = cur.rows;

        std::vector<double> parent(k, 0.0);
        double parent_w = 0.0;
        for (auto r : rows) {
            parent[static_cast<std::size_t>(data.labels[r])] += weight(r);
            parent_w += weight(r);
        }
        const double parent_imp = detail::gini(parent, parent_w);
        const bool depth_ok = !params.max_depth || depth < *params.max_depth;
        if (parent_imp <= 0.0 || parent_w <= 0.0 || !depth_ok) continue;
        if (rows.size() < 2 * min_leaf) {
            if (cur.node == 0) root_blocked = true;
            continue;
        }

        int best_feature = -1;
        double best_threshold = 0.0;
        double best_gain = -std::numeric_limits<double>::infinity();
        std::vector<std::size_t> order = rows;
        std::vector<double> left(k);
        std::vector<double> right(k);
        for (Eigen::Index f = 0; f < x.cols(); ++f) {
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return x(a, f) < x(b, f); });
            std::fill(left.begin(), left.end(), 0.0);
            double left_w = 0.0;
            for (std::size_t i = 0; i + 1 < order.size(); ++i) {
                const auto r = order[i];
                left[static_cast<std::size_t>(data.labels[r])] += weight(r);
                left_w += weight(r);
                const std::size_t n_left = i + 1;
                if (n_left < min_leaf) continue;
                if (order.size() - n_left < min_leaf) break;
                const double a = x(r, f);
                const double b = x(order[i + 1], f);
                if (!(a < b)) continue;
                for (std::size_t c = 0; c < k; ++c) right[c] = parent[c] - left[c];
                const double right_w = parent_w - left_w;
                const double gain = parent_imp - (left_w / parent_w) * detail::gini(left, left_w) -
                                    (right_w / parent_w) * detail::gini(right, right_w);
                if (gain > best_gain + 1e-12) {
                    best_gain = gain;
                    best_feature = static_cast<int>(f);
                    double mid = a + (b - a) / 2.0;
                    if (!(mid < b)) mid = a;
                    best_threshold = mid;
                }
            }
        }
        if (best_feature < 0 || best_gain < -1e-12) {
            if (cur.node == 0 && best_feature < 0) root_blocked = true;
            continue;
        }

        std::vector<std::size_t> lrows;
        std::vector<std::size_t> rrows;
        for (auto r : rows) (x(r, best_feature) <= best_threshold ? lrows : rrows).push_back(r);
        const int l = make_node(lrows, depth + 1);
        const int rr = make_node(rrows, depth + 1);
        auto& nd = nodes[static_cast<std::size_t>(cur.node)];
        nd.feature = best_feature;
        nd.threshold = best_threshold;
        nd.left = l;
        nd.right = rr;
        // right pushed first so the left subtree is expanded first
        stack.push_back({rr, std::move(rrows)});
        stack.push_back({l, std::move(lrows)});
    }
    const bool flagged = nodes.size() == 1 && root_blocked;
    return std::make_shared<DecisionTreeModel>(std::move(nodes), data.n_classes, flagged);
}

inline LearnerFactory make_tree_factory(TreeParams params) {
    return [params](const TrainingView& v) -> ModelPtr { return fit_decision_tree(v, params); };
}

} // namespace biq
