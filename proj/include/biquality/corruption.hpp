#pragma once

// Synthetic distribution-shift injection.
//
// Concept drift: a decision tree partitions the feature space; the purest
// leaves are selected until they hold at least r * n rows, and every label
// inside them is mapped through a fixed-point-free permutation.
//
// Class-conditional shift: each class is clustered with k-means (cluster
// count chosen by mean silhouette); the smaller half of the clusters is
// subsampled by a factor rho while the larger half is kept.

#include "biquality/data.hpp"
#include "biquality/tree.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace biq {

/// Bijection on [0, K) with no fixed points.
class PermutationMatrix {
public:
    explicit PermutationMatrix(std::vector<int> mapping) : mapping_(std::move(mapping)) {
        const auto k = mapping_.size();
        if (k < 2) throw ArgumentError("permutation needs K >= 2");
        std::vector<bool> seen(k, false);
        for (std::size_t i = 0; i < k; ++i) {
            const int m = mapping_[i];
            if (m < 0 || static_cast<std::size_t>(m) >= k || seen[static_cast<std::size_t>(m)]) {
                throw ArgumentError("permutation mapping is not a bijection");
            }
            if (static_cast<std::size_t>(m) == i) throw ArgumentError("permutation has a fixed point");
            seen[static_cast<std::size_t>(m)] = true;
        }
    }

    /// Uniform derangement by rejection sampling.
    static PermutationMatrix random_derangement(int n_classes, std::uint64_t seed) {
        if (n_classes < 2) throw ArgumentError("derangement needs K >= 2");
        Rng rng(seed);
        std::vector<int> m(static_cast<std::size_t>(n_classes));
        for (;;) {
            std::iota(m.begin(), m.end(), 0);
            rng.shuffle(m);
            bool ok = true;
            for (std::size_t i = 0; i < m.size(); ++i) ok = ok && m[i] != static_cast<int>(i);
            if (ok) return PermutationMatrix(m);
        }
    }

    int operator()(int label) const { return mapping_[static_cast<std::size_t>(label)]; }
    int n_classes() const { return static_cast<int>(mapping_.size()); }
    const std::vector<int>& mapping() const { return mapping_; }

private:
    std::vector<int> mapping_;
};

struct ConceptDriftSpec {
    double r = 0.0;
    double min_leaf_fraction_per_class = 0.10;
    PermutationMatrix permutation;
    std::uint64_t seed = 0;
};

struct ClassConditionalSpec {
    double rho = 1.0;
    int k_min = 2;
    int k_max = 10;
    /// Silhouette is computed on at most this many rows per class.
    std::size_t silhouette_sample = 2000;
    int kmeans_restarts = 3;
    std::uint64_t seed = 0;
};

struct LeafStat {
    int id = 0;
    std::size_t size = 0;
    double purity = 0.0;
};

struct CorruptionAudit {
    double realized_noise_fraction = 0.0;
    std::vector<std::size_t> flipped_indices;
    std::vector<int> original_labels; // aligned with flipped_indices
    std::vector<int> selected_leaves;
    std::vector<LeafStat> leaves; // in selection order
    double kept_fraction = 1.0;
    std::vector<std::size_t> kept_indices;
    std::vector<int> clusters_per_class;
    std::vector<std::vector<std::size_t>> cluster_sizes; // per class, sorted descending
    std::vector<std::string> flags;
};

inline nlohmann::json to_json(const CorruptionAudit& a) {
    nlohmann::json leaves = nlohmann::json::array();
    for (const auto& l : a.leaves) leaves.push_back({{"id", l.id}, {"size", l.size}, {"purity", l.purity}});
    return {{"realized_noise_fraction", a.realized_noise_fraction},
            {"flipped_indices", a.flipped_indices},
            {"original_labels", a.original_labels},
            {"selected_leaves", a.selected_leaves},
            {"leaves", leaves},
            {"kept_fraction", a.kept_fraction},
            {"kept_indices", a.kept_indices},
            {"clusters_per_class", a.clusters_per_class},
            {"cluster_sizes", a.cluster_sizes},
            {"flags", a.flags}};
}

/// Orders leaves by purity (descending), then size (descending), then id
/// (ascending), and returns the shortest prefix whose mass reaches r * n.
inline std::vector<LeafStat> select_purest_leaves(std::vector<LeafStat> leaves, double r, std::size_t n) {
    std::sort(leaves.begin(), leaves.end(), [](const LeafStat& a, const LeafStat& b) {
        if (a.purity != b.purity) return a.purity > b.purity;
        if (a.size != b.size) return a.size > b.size;
        return a.id < b.id;
    });
    std::vector<LeafStat> chosen;
    if (r <= 0.0) return chosen;
    const double target = r * static_cast<double>(n);
    std::size_t mass = 0;
    for (const auto& leaf : leaves) {
        if (static_cast<double>(mass) >= target) break;
        chosen.push_back(leaf);
        mass += leaf.size;
    }
    return chosen;
}

inline std::pair<Dataset, CorruptionAudit> inject_concept_drift(const Dataset& d, const ConceptDriftSpec& spec) {
    if (!(spec.r >= 0.0 && spec.r <= 1.0)) throw ArgumentError("concept drift: r must be in [0, 1]");
    if (spec.permutation.n_classes() != d.n_classes()) throw ArgumentError("concept drift: permutation size != K");
    CorruptionAudit audit;
    if (spec.r == 0.0 || d.empty()) return {d, audit};

    TreeParams tp;
    tp.min_leaf_fraction_per_class = spec.min_leaf_fraction_per_class;
    const auto tree = fit_decision_tree(TrainingView{d.features(), d.labels(), d.n_classes()}, tp);
    if (tree->nodes().size() == 1) audit.flags.push_back("degenerate_tree_single_leaf");

    std::vector<LeafStat> stats;
    for (int id : tree->leaf_ids()) {
        const auto& nd = tree->nodes()[static_cast<std::size_t>(id)];
        stats.push_back({id, nd.n_samples(), nd.purity()});
    }
    const auto chosen = select_purest_leaves(stats, spec.r, d.size());
    std::vector<bool> selected(tree->nodes().size(), false);
    for (const auto& leaf : chosen) {
        selected[static_cast<std::size_t>(leaf.id)] = true;
        audit.selected_leaves.push_back(leaf.id);
    }
    audit.leaves = chosen;

    const auto leaf_of = tree->apply(d.features());
    Labels labels = d.labels();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (selected[static_cast<std::size_t>(leaf_of[i])]) {
            audit.flipped_indices.push_back(i);
            audit.original_labels.push_back(labels[i]);
            labels[i] = spec.permutation(labels[i]);
        }
    }
    audit.realized_noise_fraction = static_cast<double>(audit.flipped_indices.size()) / static_cast<double>(d.size());
    return {d.with_labels(std::move(labels)), std::move(audit)};
}

struct KMeansResult {
    std::vector<int> assignments;
    Matrix centroids;
    double inertia = 0.0;
    int iterations = 0;
};

/// Lloyd's algorithm from k-means++ seeding; stops at an assignment fixpoint
/// or after max_iters. Empty clusters are re-seeded from the point farthest
/// from its centroid.
inline KMeansResult kmeans(const Matrix& x, int k, std::uint64_t seed, int max_iters = 300) {
    const auto n = x.rows();
    if (k < 1 || k > n) throw ArgumentError("kmeans: need 1 <= k <= n");
    Rng rng(seed);
    Matrix centroids(k, x.cols());
    std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    auto first = static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(n)));
    centroids.row(0) = x.row(first);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], (x.row(i) - centroids.row(c - 1)).squaredNorm());
            total += d2[static_cast<std::size_t>(i)];
        }
        Eigen::Index pick = n - 1;
        if (total > 0.0) {
            double u = rng.uniform() * total;
            for (Eigen::Index i = 0; i < n; ++i) {
                u -= d2[static_cast<std::size_t>(i)];
                if (u < 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(n)));
        }
        centroids.row(c) = x.row(pick);
    }

    KMeansResult res;
    res.assignments.assign(static_cast<std::size_t>(n), -1);
    for (int it = 0; it < max_iters; ++it) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double dist = (x.row(i) - centroids.row(c)).squaredNorm();
                if (dist < best_d) {
                    best_d = dist;
                    best = c;
                }
            }
            if (res.assignments[static_cast<std::size_t>(i)] != best) {
                res.assignments[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        res.iterations = it + 1;
        if (!changed && it > 0) break;
        Matrix sums = Matrix::Zero(k, x.cols());
        std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int c = res.assignments[static_cast<std::size_t>(i)];
            sums.row(c) += x.row(i);
            ++counts[static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
                continue;
            }
            Eigen::Index far = 0;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double dist = (x.row(i) - centroids.row(res.assignments[static_cast<std::size_t>(i)])).squaredNorm();
                if (dist > far_d) {
                    far_d = dist;
                    far = i;
                }
            }
            centroids.row(c) = x.row(far);
            res.assignments[static_cast<std::size_t>(far)] = c;
            changed = true;
        }
    }
    res.inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        res.inertia += (x.row(i) - centroids.row(res.assignments[static_cast<std::size_t>(i)])).squaredNorm();
    }
    res.centroids = std::move(centroids);
    return res;
}

/// Mean silhouette (Euclidean). Rows in singleton clusters score 0.
inline double mean_silhouette(const Matrix& x, const std::vector<int>& assignments) {
    const auto n = static_cast<std::size_t>(x.rows());
    if (assignments.size() != n) throw ArgumentError("mean_silhouette: assignments misaligned");
    int k = 0;
    for (int a : assignments) {
        if (a < 0) throw ArgumentError("mean_silhouette: negative cluster id");
        k = std::max(k, a + 1);
    }
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
    for (int a : assignments) ++sizes[static_cast<std::size_t>(a)];
    int non_empty = 0;
    for (auto s : sizes) non_empty += s > 0 ? 1 : 0;
    if (non_empty < 2) throw ArgumentError("mean_silhouette: needs at least two non-empty clusters");

    double total = 0.0;
    std::vector<double> dist_sum(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            dist_sum[static_cast<std::size_t>(assignments[j])] +=
                (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).norm();
        }
        const auto own = static_cast<std::size_t>(assignments[i]);
        if (sizes[own] <= 1) continue;
        const double a = dist_sum[own] / static_cast<double>(sizes[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < sizes.size(); ++c) {
            if (c == own || sizes[c] == 0) continue;
            b = std::min(b, dist_sum[c] / static_cast<double>(sizes[c]));
        }
        const double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / static_cast<double>(n);
}

/// Rows kept per cluster when the `n_small` smallest clusters are shrunk by
/// rho: round(size / rho), at least 1 for a non-empty cluster. Input sizes
/// must be sorted descending.
inline std::vector<std::size_t> subsampled_cluster_sizes(const std::vector<std::size_t>& sizes_desc, double rho) {
    if (!(rho >= 1.0)) throw ArgumentError("rho must be >= 1");
    const std::size_t c = sizes_desc.size();
    const std::size_t n_large = c - c / 2;
    std::vector<std::size_t> kept(sizes_desc);
    for (std::size_t i = n_large; i < c; ++i) {
        if (sizes_desc[i] == 0) continue;
        const double v = std::isinf(rho) ? 0.0 : std::round(static_cast<double>(sizes_desc[i]) / rho);
        kept[i] = std::max<std::size_t>(1, static_cast<std::size_t>(v));
    }
    return kept;
}

struct ClassClustering {
    std::vector<int> assignments;
    int n_clusters = 0;
    double silhouette = 0.0;
};

/// Picks the cluster count in [k_min, k_max] maximizing mean silhouette.
inline ClassClustering cluster_by_silhouette(const Matrix& x, const ClassConditionalSpec& spec, std::uint64_t seed) {
    const auto n = static_cast<int>(x.rows());
    const int k_hi = std::min(spec.k_max, n - 1);
    ClassClustering best;
    best.silhouette = -std::numeric_limits<double>::infinity();

    // silhouette sample (fixed per class so every k is scored on the same rows)
    std::vector<std::size_t> sample = iota_indices(static_cast<std::size_t>(n));
    if (sample.size() > spec.silhouette_sample) {
        Rng rng(derive_seed(seed, "silhouette"));
        rng.shuffle(sample);
        sample.resize(spec.silhouette_sample);
        std::sort(sample.begin(), sample.end());
    }
    const Matrix xs = take_rows(x, sample);

    for (int k = std::max(2, spec.k_min); k <= k_hi; ++k) {
        KMeansResult km;
        km.inertia = std::numeric_limits<double>::infinity();
        for (int restart = 0; restart < std::max(1, spec.kmeans_restarts); ++restart) {
            auto r = kmeans(x, k, derive_seed(seed, k, restart));
            if (r.inertia < km.inertia) km = std::move(r);
        }
        std::vector<int> sub(sample.size());
        for (std::size_t i = 0; i < sample.size(); ++i) sub[i] = km.assignments[sample[i]];
        int distinct = 0;
        {
            std::vector<int> seen(static_cast<std::size_t>(k), 0);
            for (int a : sub) seen[static_cast<std::size_t>(a)] = 1;
            for (int s : seen) distinct += s;
        }
        if (distinct < 2) continue;
        const double s = mean_silhouette(xs, sub);
        if (s > best.silhouette) {
            best.silhouette = s;
            best.n_clusters = k;
            best.assignments = std::move(km.assignments);
        }
    }
    return best;
}

inline std::pair<Dataset, CorruptionAudit> inject_class_conditional_shift(const Dataset& d,
                                                                          const ClassConditionalSpec& spec) {
    if (!(spec.rho >= 1.0)) throw ArgumentError("class-conditional shift: rho must be >= 1");
    CorruptionAudit audit;
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(d.n_classes()));
    for (std::size_t i = 0; i < d.size(); ++i) by_class[static_cast<std::size_t>(d.labels()[i])].push_back(i);

    std::vector<bool> keep(d.size(), true);
    for (std::size_t k = 0; k < by_class.size(); ++k) {
        const auto& rows = by_class[k];
        if (spec.rho == 1.0) {
            audit.clusters_per_class.push_back(0);
            audit.cluster_sizes.emplace_back();
            continue;
        }
        if (rows.size() < static_cast<std::size_t>(std::max(3, spec.k_min + 1))) {
            if (!rows.empty()) audit.flags.push_back("class_" + std::to_string(k) + "_too_small_to_cluster");
            audit.clusters_per_class.push_back(0);
            audit.cluster_sizes.emplace_back();
            continue;
        }
        const Matrix xk = take_rows(d.features(), rows);
        const auto clustering = cluster_by_silhouette(xk, spec, derive_seed(spec.seed, "class", k));
        if (clustering.n_clusters == 0) {
            audit.flags.push_back("class_" + std::to_string(k) + "_clustering_failed");
            audit.clusters_per_class.push_back(0);
            audit.cluster_sizes.emplace_back();
            continue;
        }
        const int c = clustering.n_clusters;
        std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(c));
        for (std::size_t i = 0; i < rows.size(); ++i) members[static_cast<std::size_t>(clustering.assignments[i])].push_back(rows[i]);
        std::vector<std::size_t> order = iota_indices(static_cast<std::size_t>(c));
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return members[a].size() > members[b].size(); });
        std::vector<std::size_t> sizes;
        for (auto o : order) sizes.push_back(members[o].size());
        const auto kept = subsampled_cluster_sizes(sizes, spec.rho);
        Rng rng(derive_seed(spec.seed, "subsample", k));
        for (std::size_t j = 0; j < order.size(); ++j) {
            auto cluster_rows = members[order[j]];
            if (kept[j] >= cluster_rows.size()) continue;
            rng.shuffle(cluster_rows);
            for (std::size_t i = kept[j]; i < cluster_rows.size(); ++i) keep[cluster_rows[i]] = false;
        }
        audit.clusters_per_class.push_back(c);
        audit.cluster_sizes.push_back(std::move(sizes));
    }
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (keep[i]) audit.kept_indices.push_back(i);
    }
    audit.kept_fraction = d.empty() ? 1.0 : static_cast<double>(audit.kept_indices.size()) / static_cast<double>(d.size());
    return {d.subset(audit.kept_indices), std::move(audit)};
}

} // namespace biq
