#include "biquality/biquality.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

using namespace biq;

namespace {

Dataset blobs_2class(std::size_t per_class, std::uint64_t seed) {
    return make_blobs({{0.0, 0.0}, {6.0, 6.0}}, {per_class, per_class}, {0, 1}, 0.5, seed);
}

} // namespace

TEST(LoadCsv, EncodesLabelsByFirstAppearance) {
    std::istringstream in("x,y,label\n1,2,a\n3,4,b\n5,6,a\n7,8,b\n");
    const auto d = read_csv(in, "label");
    EXPECT_EQ(d.n_classes(), 2);
    EXPECT_EQ(d.labels(), (Labels{0, 1, 0, 1}));
    EXPECT_EQ(d.label_names(), (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(d.feature_names(), (std::vector<std::string>{"x", "y"}));
    EXPECT_DOUBLE_EQ(d.features()(2, 1), 6.0);
}

TEST(LoadCsv, FirstAppearanceIsNotLexical) {
    std::istringstream in("label,x\nz,1\na,2\n");
    const auto d = read_csv(in, "label");
    EXPECT_EQ(d.label_names(), (std::vector<std::string>{"z", "a"}));
}

TEST(LoadCsv, NanCellNamesRow) {
    std::istringstream in("x,label\n1,a\nnan,b\n");
    try {
        read_csv(in, "label");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.row, 2u);
        EXPECT_NE(std::string(e.what()).find('2'), std::string::npos);
    }
}

TEST(LoadCsv, NonNumericCellIsParseError) {
    std::istringstream in("x,label\n1,a\nabc,b\n");
    EXPECT_THROW(read_csv(in, "label"), ParseError);
}

TEST(LoadCsv, SingleClassIsDegenerate) {
    std::istringstream in("x,label\n1,a\n2,a\n");
    EXPECT_THROW(read_csv(in, "label"), DegenerateDatasetError);
}

TEST(LoadCsv, MissingLabelColumnIsSchemaError) {
    std::istringstream in("x,y\n1,2\n");
    EXPECT_THROW(read_csv(in, "label"), SchemaError);
}

TEST(LoadCsv, RoundTripsThroughWriter) {
    const auto d = make_two_moons(50, 0.1, 3);
    std::stringstream buf;
    write_csv(buf, d);
    const auto back = read_csv(buf, "label");
    EXPECT_TRUE(back == d);
}

TEST(Dataset, RejectsNonFiniteAndBadLabels) {
    Matrix x(2, 1);
    x << 1.0, std::numeric_limits<double>::infinity();
    EXPECT_THROW(Dataset(x, {0, 1}, 2), Error);
    x(1, 0) = 2.0;
    EXPECT_THROW(Dataset(x, {0, 2}, 2), Error);
    EXPECT_THROW(Dataset(x, {0}, 2), Error);
    EXPECT_THROW(Dataset(x, {0, 0}, 1), Error);
}

TEST(BiqualityDataset, RejectsEmptyOrMismatchedPartitions) {
    const auto d = blobs_2class(10, 1);
    EXPECT_THROW(BiqualityDataset(d.subset({}), d), Error);
    const auto other = make_blobs({{0.0}, {1.0}}, {5, 5}, {0, 1}, 0.1, 2);
    EXPECT_THROW(BiqualityDataset(d, other), Error);
}

TEST(StratifiedSplit, ExactProportions) {
    const auto d = blobs_2class(50, 7);
    const auto [a, b] = stratified_split(d, 0.8, 11);
    EXPECT_EQ(a.size(), 80u);
    EXPECT_EQ(b.size(), 20u);
    EXPECT_EQ(a.class_counts(), (std::vector<std::size_t>{40, 40}));
    EXPECT_EQ(b.class_counts(), (std::vector<std::size_t>{10, 10}));
}

TEST(StratifiedSplit, DeterministicForSeed) {
    const auto d = blobs_2class(50, 7);
    const auto p1 = stratified_split_indices(d.labels(), 2, 0.8, 99);
    const auto p2 = stratified_split_indices(d.labels(), 2, 0.8, 99);
    EXPECT_EQ(p1, p2);
    const auto p3 = stratified_split_indices(d.labels(), 2, 0.8, 100);
    EXPECT_NE(p1.first, p3.first);
}

TEST(StratifiedSplit, SingletonClassRaises) {
    Matrix x = Matrix::Zero(10, 1);
    Labels y(10, 0);
    y[9] = 1;
    const Dataset d(x, y, 2);
    EXPECT_THROW(stratified_split(d, 0.8, 1), StratificationError);
}

TEST(StratifiedSplit, PartitionsIndicesAndRespectsTolerance) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(4));
        Labels y;
        for (int c = 0; c < k; ++c) {
            const auto m = 2 + rng.below(40);
            for (std::size_t i = 0; i < m; ++i) y.push_back(c);
        }
        rng.shuffle(y);
        const double frac = 0.05 + 0.9 * rng.uniform();
        const auto [first, second] = stratified_split_indices(y, k, frac, trial);
        std::multiset<std::size_t> all(first.begin(), first.end());
        all.insert(second.begin(), second.end());
        ASSERT_EQ(all.size(), y.size());
        std::size_t expect = 0;
        for (auto v : all) ASSERT_EQ(v, expect++);
        std::vector<double> per(static_cast<std::size_t>(k), 0.0);
        std::vector<double> tot(static_cast<std::size_t>(k), 0.0);
        for (auto i : first) per[static_cast<std::size_t>(y[i])] += 1.0;
        for (int v : y) tot[static_cast<std::size_t>(v)] += 1.0;
        for (int c = 0; c < k; ++c) {
            const auto cu = static_cast<std::size_t>(c);
            EXPECT_LE(std::abs(per[cu] / tot[cu] - frac), 1.0 / tot[cu] + 1e-12);
            EXPECT_LE(std::abs(per[cu] - std::round(frac * tot[cu])), 1.0);
        }
    }
}

TEST(TwoMoons, BalancedClasses) {
    const auto d = make_two_moons(100, 0.1, 1);
    EXPECT_EQ(d.class_counts(), (std::vector<std::size_t>{50, 50}));
    EXPECT_EQ(d.n_features(), 2);
    const auto odd = make_two_moons(101, 0.1, 1);
    const auto c = odd.class_counts();
    EXPECT_LE(std::max(c[0], c[1]) - std::min(c[0], c[1]), 1u);
}

TEST(TwoMoons, NoiselessOuterArcOnUnitCircle) {
    const auto d = make_two_moons(200, 0.0, 4);
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.labels()[i] != 0) continue;
        const double x = d.features()(static_cast<Eigen::Index>(i), 0);
        const double y = d.features()(static_cast<Eigen::Index>(i), 1);
        EXPECT_NEAR(std::hypot(x, y), 1.0, 1e-12);
        EXPECT_GE(y, -1e-12);
    }
}

TEST(TwoMoons, GbtSeparatesHeldOut) {
    const auto d = make_two_moons(1000, 0.1, 21);
    const auto [train, test] = stratified_split(d, 0.8, 2);
    const auto model = fit_gbt(TrainingView{train.features(), train.labels(), 2}, GBTParams{});
    const double kappa = cohens_kappa(test.labels(), model->predict(test.features()), 2);
    EXPECT_GE(kappa, 0.9);
}

TEST(TrustedRatio, FullPerformanceAtPOneReturnsOne) {
    const auto d = make_two_moons(400, 0.3, 8);
    GBTParams gp;
    gp.n_rounds = 20;
    const auto res = calibrate_trusted_ratio(d, 1.0, make_gbt_factory(gp), {0.5, 1.0}, 3);
    // subsample may tie the full model; otherwise the full fraction qualifies
    EXPECT_TRUE(res.ratio == 1.0 || res.kappas.front() >= res.full_kappa);
    const auto only_full = calibrate_trusted_ratio(d, 1.0, make_gbt_factory(gp), {1.0}, 3);
    EXPECT_EQ(only_full.ratio, 1.0);
    EXPECT_TRUE(only_full.flags.empty());
}

TEST(TrustedRatio, SmallestQualifyingGridValueMatchesBruteForce) {
    const auto d = blobs_2class(500, 13);
    const auto learner = make_tree_factory(TreeParams{});
    const std::vector<double> grid = {0.005, 0.01, 0.02, 0.04, 0.08, 1.0};
    const auto res = calibrate_trusted_ratio(d, 0.5, learner, grid, 17);
    // brute force every grid point with the same internal protocol
    const auto [fit, val] = stratified_split(d, 0.75, derive_seed(17, "validation"));
    const double full = detail::holdout_kappa(learner, fit, val);
    double expected = grid.back();
    for (double g : grid) {
        const double k = g >= 1.0 ? full : detail::holdout_kappa(learner, detail::trusted_subsample(fit, g, derive_seed(17, "subsample", g)), val);
        if (k >= 0.5 * full) {
            expected = g;
            break;
        }
    }
    EXPECT_EQ(res.ratio, expected);
    EXPECT_LT(res.ratio, 0.1);
}

TEST(TrustedRatio, EmptyGridRaises) {
    const auto d = blobs_2class(20, 1);
    EXPECT_THROW(calibrate_trusted_ratio(d, 0.5, make_tree_factory({}), {}, 1), ArgumentError);
}

TEST(Metadata, RecordsLabelMapping) {
    std::istringstream in("x,label\n1,b\n2,a\n");
    const auto meta = dataset_metadata(read_csv(in, "label"));
    EXPECT_EQ(meta["n_classes"], 2);
    EXPECT_EQ(meta["label_names"][0], "b");
}
