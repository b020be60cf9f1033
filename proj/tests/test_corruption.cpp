#include "biquality/biquality.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

using namespace biq;

namespace {

// 1-D data made of pure contiguous segments with alternating labels.
Dataset segments(const std::vector<std::size_t>& sizes, int n_classes) {
    std::size_t n = 0;
    for (auto s : sizes) n += s;
    Matrix x(static_cast<Eigen::Index>(n), 1);
    Labels y(n);
    std::size_t i = 0;
    for (std::size_t s = 0; s < sizes.size(); ++s) {
        for (std::size_t j = 0; j < sizes[s]; ++j, ++i) {
            x(static_cast<Eigen::Index>(i), 0) = static_cast<double>(s) * 10.0 + static_cast<double>(j) * 1e-3;
            y[i] = static_cast<int>(s % static_cast<std::size_t>(n_classes));
        }
    }
    return Dataset(x, y, n_classes);
}

Dataset four_clusters_one_class() {
    return make_blobs({{0.0, 0.0}, {100.0, 0.0}, {0.0, 100.0}, {100.0, 100.0}}, {400, 300, 200, 100}, {0, 0, 0, 0}, 1.0, 5);
}

Dataset with_k(const Dataset& d, int k) { return Dataset(d.features(), d.labels(), k); }

} // namespace

TEST(Permutation, DerangementHasNoFixedPoints) {
    for (int k = 2; k <= 8; ++k) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto p = PermutationMatrix::random_derangement(k, seed);
            std::set<int> image;
            for (int c = 0; c < k; ++c) {
                EXPECT_NE(p(c), c);
                image.insert(p(c));
            }
            EXPECT_EQ(image.size(), static_cast<std::size_t>(k));
        }
    }
    EXPECT_THROW(PermutationMatrix({0, 1}), ArgumentError);
    EXPECT_THROW(PermutationMatrix({1, 1}), ArgumentError);
}

TEST(ConceptDrift, ZeroRateIsIdentity) {
    const auto d = make_two_moons(200, 0.2, 1);
    const auto [out, audit] = inject_concept_drift(d, {0.0, 0.1, PermutationMatrix({1, 0}), 3});
    EXPECT_TRUE(out == d);
    EXPECT_TRUE(audit.flipped_indices.empty());
    EXPECT_EQ(audit.realized_noise_fraction, 0.0);
}

TEST(ConceptDrift, CyclicPermutationInsideSelectedLeaf) {
    Matrix x(3, 1);
    x << 0, 1, 2;
    const Dataset d(x, {0, 0, 1}, 3);
    const auto [out, audit] = inject_concept_drift(d, {0.5, 0.6, PermutationMatrix({1, 2, 0}), 1});
    EXPECT_EQ(out.labels(), (Labels{1, 1, 2}));
    EXPECT_FALSE(audit.flags.empty());
}

TEST(ConceptDrift, EqualMassLeavesSelectExactlyTwo) {
    const auto d = segments({150, 150, 150, 150, 150, 150, 100}, 2);
    const auto [out, audit] = inject_concept_drift(d, {0.3, 0.1, PermutationMatrix({1, 0}), 1});
    EXPECT_EQ(audit.selected_leaves.size(), 2u);
    EXPECT_EQ(audit.flipped_indices.size(), 300u);
    EXPECT_DOUBLE_EQ(audit.realized_noise_fraction, 0.3);
}

TEST(ConceptDrift, LeafOrderingByPuritySizeThenId) {
    const std::vector<LeafStat> leaves = {{1, 100, 0.9}, {2, 150, 1.0}, {3, 200, 1.0}, {4, 150, 1.0}, {5, 400, 0.5}};
    const auto chosen = select_purest_leaves(leaves, 0.3, 1000);
    ASSERT_EQ(chosen.size(), 2u);
    EXPECT_EQ(chosen[0].id, 3);
    EXPECT_EQ(chosen[1].id, 2);
    EXPECT_TRUE(select_purest_leaves(leaves, 0.0, 1000).empty());
}

TEST(ConceptDrift, RealizedFractionAndFlipsOnRandomData) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const int k = 2 + static_cast<int>(seed % 3);
        std::vector<std::vector<double>> centers;
        std::vector<std::size_t> sizes;
        std::vector<int> labels;
        Rng rng(seed);
        for (int c = 0; c < 2 * k; ++c) {
            centers.push_back({rng.uniform() * 6.0, rng.uniform() * 6.0});
            sizes.push_back(60 + rng.below(80));
            labels.push_back(c % k);
        }
        const auto d = with_k(make_blobs(centers, sizes, labels, 1.0, seed), k);
        const double r = 0.05 + 0.45 * rng.uniform();
        const auto perm = PermutationMatrix::random_derangement(k, seed);
        const auto [out, audit] = inject_concept_drift(d, {r, 0.1, perm, seed});
        double max_leaf = 0.0;
        for (const auto& leaf : audit.leaves) max_leaf = std::max(max_leaf, static_cast<double>(leaf.size) / static_cast<double>(d.size()));
        EXPECT_GE(audit.realized_noise_fraction, r);
        EXPECT_LT(audit.realized_noise_fraction, r + max_leaf);
        std::set<std::size_t> flipped(audit.flipped_indices.begin(), audit.flipped_indices.end());
        for (std::size_t j = 0; j < audit.flipped_indices.size(); ++j) {
            const auto i = audit.flipped_indices[j];
            EXPECT_EQ(audit.original_labels[j], d.labels()[i]);
            EXPECT_EQ(out.labels()[i], perm(d.labels()[i]));
        }
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (!flipped.count(i)) EXPECT_EQ(out.labels()[i], d.labels()[i]);
        }
        EXPECT_EQ(out.features(), d.features());
    }
}

TEST(ClassConditional, RhoOneKeepsEverything) {
    const auto d = make_two_moons(300, 0.2, 2);
    ClassConditionalSpec spec;
    const auto [out, audit] = inject_class_conditional_shift(d, spec);
    EXPECT_EQ(audit.kept_fraction, 1.0);
    EXPECT_TRUE(out == d);
}

TEST(ClassConditional, SubsampleArithmetic) {
    const auto kept = subsampled_cluster_sizes({400, 300, 200, 100}, 10.0);
    EXPECT_EQ(kept, (std::vector<std::size_t>{400, 300, 20, 10}));
    const auto odd = subsampled_cluster_sizes({50, 40, 30}, 100.0);
    EXPECT_EQ(odd, (std::vector<std::size_t>{50, 40, 1}));
    const auto inf = subsampled_cluster_sizes({400, 300, 200, 100}, std::numeric_limits<double>::infinity());
    EXPECT_EQ(inf, (std::vector<std::size_t>{400, 300, 1, 1}));
}

TEST(ClassConditional, FourClusterConstructionKeeps73Percent) {
    const auto d = with_k(four_clusters_one_class(), 2);
    ClassConditionalSpec spec;
    spec.rho = 10.0;
    spec.seed = 4;
    const auto [out, audit] = inject_class_conditional_shift(d, spec);
    ASSERT_EQ(audit.clusters_per_class[0], 4);
    EXPECT_EQ(audit.cluster_sizes[0], (std::vector<std::size_t>{400, 300, 200, 100}));
    EXPECT_EQ(out.size(), 730u);
    EXPECT_EQ(audit.kept_fraction, 0.73);
}

TEST(ClassConditional, OnlyRemovesRowsAndIsMonotoneInRho) {
    const auto d = make_blobs({{0, 0}, {8, 0}, {0, 8}, {8, 8}, {4, 4}}, {200, 120, 80, 150, 60}, {0, 0, 0, 1, 1}, 1.0, 9);
    double prev = 1.0;
    for (double rho : {1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0}) {
        ClassConditionalSpec spec;
        spec.rho = rho;
        spec.seed = 11;
        const auto [out, audit] = inject_class_conditional_shift(d, spec);
        EXPECT_LE(audit.kept_fraction, prev);
        prev = audit.kept_fraction;
        ASSERT_EQ(out.size(), audit.kept_indices.size());
        for (std::size_t j = 0; j < out.size(); ++j) {
            const auto i = audit.kept_indices[j];
            EXPECT_EQ(out.labels()[j], d.labels()[i]);
            EXPECT_EQ(out.features().row(static_cast<Eigen::Index>(j)), d.features().row(static_cast<Eigen::Index>(i)));
        }
    }
}

TEST(ClassConditional, TinyClassLeftUntouchedAndFlagged) {
    Matrix x(12, 1);
    for (int i = 0; i < 12; ++i) x(i, 0) = i < 10 ? (i < 5 ? i : 100 + i) : 50 + i;
    Labels y(12, 0);
    y[10] = y[11] = 1;
    const Dataset d(x, y, 2);
    ClassConditionalSpec spec;
    spec.rho = 5.0;
    const auto [out, audit] = inject_class_conditional_shift(d, spec);
    EXPECT_FALSE(audit.flags.empty());
    EXPECT_EQ(out.class_counts()[1], 2u);
}

TEST(KMeans, SingleClusterCentroidIsMean) {
    const auto d = make_two_moons(100, 0.3, 4);
    const auto res = kmeans(d.features(), 1, 1);
    const Eigen::RowVectorXd mean = d.features().colwise().mean();
    EXPECT_LT((res.centroids.row(0) - mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(KMeans, RecoversSeparatedBlobs) {
    const auto d = make_blobs({{0.0, 0.0}, {20.0, 20.0}}, {50, 70}, {0, 1}, 1.0, 6);
    const auto res = kmeans(d.features(), 2, 3);
    std::map<int, std::set<int>> mapping;
    for (std::size_t i = 0; i < d.size(); ++i) mapping[d.labels()[i]].insert(res.assignments[i]);
    EXPECT_EQ(mapping[0].size(), 1u);
    EXPECT_EQ(mapping[1].size(), 1u);
    EXPECT_NE(*mapping[0].begin(), *mapping[1].begin());
}

TEST(KMeans, OneClusterPerPointHasZeroInertia) {
    const auto d = make_two_moons(30, 0.3, 8);
    const auto res = kmeans(d.features(), 30, 2);
    EXPECT_NEAR(res.inertia, 0.0, 1e-20);
}

TEST(KMeans, DeterministicPerSeed) {
    const auto d = make_two_moons(200, 0.3, 8);
    EXPECT_EQ(kmeans(d.features(), 4, 7).assignments, kmeans(d.features(), 4, 7).assignments);
}

TEST(Silhouette, SingletonsScoreZero) {
    Matrix x(2, 1);
    x << 0, 1;
    EXPECT_EQ(mean_silhouette(x, {0, 1}), 0.0);
}

TEST(Silhouette, SeparatedBlobsScoreHigh) {
    const auto d = make_blobs({{0.0, 0.0}, {20.0, 0.0}}, {60, 60}, {0, 1}, 1.0, 2);
    EXPECT_GE(mean_silhouette(d.features(), d.labels()), 0.8);
}

TEST(Silhouette, RandomAssignmentNearZero) {
    Rng rng(12);
    Matrix x(400, 2);
    std::vector<int> a(400);
    for (Eigen::Index i = 0; i < 400; ++i) {
        x(i, 0) = rng.uniform();
        x(i, 1) = rng.uniform();
        a[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(2));
    }
    EXPECT_LE(std::abs(mean_silhouette(x, a)), 0.2);
}

TEST(Silhouette, SingleClusterRaises) {
    Matrix x(3, 1);
    x << 0, 1, 2;
    EXPECT_THROW(mean_silhouette(x, {0, 0, 0}), ArgumentError);
}

TEST(Audit, SerializesToJson) {
    const auto d = segments({150, 150, 150, 150, 150, 150, 100}, 2);
    const auto [out, audit] = inject_concept_drift(d, {0.3, 0.1, PermutationMatrix({1, 0}), 1});
    const auto j = to_json(audit);
    EXPECT_EQ(j["flipped_indices"].size(), 300u);
    EXPECT_DOUBLE_EQ(j["realized_noise_fraction"].get<double>(), 0.3);
}
