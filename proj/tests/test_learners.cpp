#include "biquality/biquality.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace biq;
using namespace biq::testing;

namespace {

void expect_probability_rows(const Matrix& p) {
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < p.cols(); ++k) {
            EXPECT_GE(p(i, k), 0.0);
            s += p(i, k);
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}


// Binary model whose input column is the true positive rate and whose output
// is sharpened (overconfident) by squaring the odds.
class SharpenedModel final : public ProbabilisticModel {
public:
    int n_classes() const override { return 2; }
    Matrix predict_proba(const Matrix& x) const override {
        Matrix p(x.rows(), 2);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double q = x(i, 0);
            const double s = q * q / (q * q + (1 - q) * (1 - q));
            p(i, 0) = 1.0 - s;
            p(i, 1) = s;
        }
        return p;
    }
    nlohmann::json to_json() const override { return {{"type", "sharpened"}}; }
};

class IdentityModel final : public ProbabilisticModel {
public:
    int n_classes() const override { return 2; }
    Matrix predict_proba(const Matrix& x) const override {
        Matrix p(x.rows(), 2);
        p.col(1) = x.col(0);
        p.col(0) = 1.0 - x.col(0).array();
        return p;
    }
    nlohmann::json to_json() const override { return {{"type", "identity"}}; }
};

double expected_calibration_error(const Matrix& p, const Labels& y) {
    std::vector<double> conf(10, 0.0);
    std::vector<double> hit(10, 0.0);
    std::vector<double> cnt(10, 0.0);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double s = p(i, 1);
        const auto b = std::min<std::size_t>(9, static_cast<std::size_t>(s * 10.0));
        conf[b] += s;
        hit[b] += y[static_cast<std::size_t>(i)] == 1 ? 1.0 : 0.0;
        cnt[b] += 1.0;
    }
    double ece = 0.0;
    for (std::size_t b = 0; b < 10; ++b) ece += std::abs(hit[b] - conf[b]);
    return ece / static_cast<double>(p.rows());
}

std::pair<Matrix, Labels> bernoulli_sample(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Matrix x(static_cast<Eigen::Index>(n), 1);
    Labels y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double q = 0.02 + 0.96 * rng.uniform();
        x(static_cast<Eigen::Index>(i), 0) = q;
        y[i] = rng.uniform() < q ? 1 : 0;
    }
    return {x, y};
}

Dataset xor_data() {
    Matrix x(40, 2);
    Labels y(40);
    for (int i = 0; i < 40; ++i) {
        const int a = i % 2;
        const int b = (i / 2) % 2;
        x(i, 0) = a;
        x(i, 1) = b;
        y[static_cast<std::size_t>(i)] = a ^ b;
    }
    return Dataset(x, y, 2);
}

} // namespace

TEST(DecisionTree, PureInputGivesSingleCertainLeaf) {
    Matrix x(5, 1);
    x << 1, 2, 3, 4, 5;
    const Labels y(5, 1);
    const auto tree = fit_decision_tree(TrainingView{x, y, 2}, TreeParams{});
    EXPECT_EQ(tree->nodes().size(), 1u);
    EXPECT_FALSE(tree->flagged_single_leaf());
    const auto p = tree->predict_proba(x);
    for (Eigen::Index i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(p(i, 1), 1.0);
}

TEST(DecisionTree, FitsXorExactly) {
    const auto d = xor_data();
    TreeParams tp;
    tp.max_depth = 2;
    const auto tree = fit_decision_tree(TrainingView{d.features(), d.labels(), 2}, tp);
    EXPECT_EQ(tree->predict(d.features()), d.labels());
}

TEST(DecisionTree, UnsatisfiableLeafSizeIsFlagged) {
    const auto d = xor_data();
    TreeParams tp;
    tp.min_leaf_fraction_per_class = 0.6;
    const auto tree = fit_decision_tree(TrainingView{d.features(), d.labels(), 2}, tp);
    EXPECT_EQ(tree->nodes().size(), 1u);
    EXPECT_TRUE(tree->flagged_single_leaf());
}

TEST(DecisionTree, LeavesRespectMinimumSize) {
    const auto d = make_two_moons(500, 0.2, 5);
    TreeParams tp;
    tp.min_leaf_fraction_per_class = 0.1;
    const auto tree = fit_decision_tree(TrainingView{d.features(), d.labels(), 2}, tp);
    for (int id : tree->leaf_ids()) EXPECT_GE(tree->nodes()[static_cast<std::size_t>(id)].n_samples(), 50u);
    EXPECT_GT(tree->leaf_ids().size(), 1u);
}

TEST(DecisionTree, IntegerWeightsEqualRowReplication) {
    const auto d = make_two_moons(120, 0.25, 9);
    Rng rng(4);
    std::vector<double> w(d.size());
    std::vector<std::size_t> rep;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto m = rng.below(4);
        w[i] = static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r) rep.push_back(i);
    }
    TreeParams tp;
    tp.min_leaf_fraction_per_class = 1e-12;
    const auto weighted = fit_decision_tree(TrainingView{d.features(), d.labels(), 2, w}, tp);
    const auto big = d.subset(rep);
    const auto replicated = fit_decision_tree(TrainingView{big.features(), big.labels(), 2}, tp);
    const auto grid = make_two_moons(300, 0.4, 77).features();
    EXPECT_LT((weighted->predict_proba(grid) - replicated->predict_proba(grid)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Gbt, SeparatesLinearBlobs) {
    const auto d = make_blobs({{0.0, 0.0}, {4.0, 4.0}, {-4.0, 4.0}}, {150, 150, 150}, {0, 1, 2}, 0.6, 3);
    const auto [train, test] = stratified_split(d, 0.7, 1);
    const auto model = fit_gbt(TrainingView{train.features(), train.labels(), 3}, GBTParams{});
    EXPECT_GE(cohens_kappa(test.labels(), model->predict(test.features()), 3), 0.95);
    expect_probability_rows(model->predict_proba(test.features()));
}

TEST(Gbt, SingleNonzeroWeightConcentratesOnItsClass) {
    const auto d = make_two_moons(200, 0.1, 2);
    std::vector<double> w(d.size(), 0.0);
    w[17] = 1.0;
    const auto model = fit_gbt(TrainingView{d.features(), d.labels(), 2, w}, GBTParams{});
    const Matrix row = d.features().row(17);
    EXPECT_EQ(model->predict(row)[0], d.labels()[17]);
}

TEST(Gbt, DoublingWeightsLeavesPredictionsUnchanged) {
    const auto d = make_two_moons(400, 0.3, 6);
    Rng rng(1);
    std::vector<double> w(d.size());
    for (auto& v : w) v = 0.2 + rng.uniform();
    std::vector<double> w2(w);
    for (auto& v : w2) v *= 2.0;
    GBTParams gp;
    gp.min_hessian_to_split = 0.0;
    const auto a = fit_gbt(TrainingView{d.features(), d.labels(), 2, w}, gp);
    const auto b = fit_gbt(TrainingView{d.features(), d.labels(), 2, w2}, gp);
    EXPECT_LT((a->predict_proba(d.features()) - b->predict_proba(d.features())).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Gbt, TrainingLossNonincreasing) {
    const auto d = make_blobs({{0.0, 0.0}, {1.5, 0.0}, {0.0, 1.5}}, {100, 100, 100}, {0, 1, 2}, 0.8, 12);
    Rng rng(2);
    std::vector<double> w(d.size());
    for (auto& v : w) v = rng.uniform() * 3.0;
    const auto model = fit_gbt(TrainingView{d.features(), d.labels(), 3, w}, GBTParams{});
    const auto& h = model->loss_history();
    ASSERT_EQ(h.size(), 100u);
    for (std::size_t i = 1; i < h.size(); ++i) EXPECT_LE(h[i], h[i - 1] + 1e-12);
}

TEST(Gbt, IntegerWeightsEqualRowReplication) {
    const auto d = make_two_moons(150, 0.25, 19);
    Rng rng(8);
    std::vector<double> w(d.size());
    std::vector<std::size_t> rep;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto m = rng.below(3);
        w[i] = static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r) rep.push_back(i);
    }
    GBTParams gp;
    gp.n_rounds = 30;
    gp.min_samples_leaf = 1;
    const auto weighted = fit_gbt(TrainingView{d.features(), d.labels(), 2, w}, gp);
    const auto big = d.subset(rep);
    const auto replicated = fit_gbt(TrainingView{big.features(), big.labels(), 2}, gp);
    const auto grid = make_two_moons(300, 0.4, 5).features();
    EXPECT_LT((weighted->predict_proba(grid) - replicated->predict_proba(grid)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Gbt, InvalidParamsRejected) {
    GBTParams gp;
    gp.learning_rate = 0.0;
    EXPECT_THROW(gp.validate(), ArgumentError);
    gp = {};
    gp.max_bins = 1;
    EXPECT_THROW(gp.validate(), ArgumentError);
}

TEST(Isotonic, PoolsViolators) {
    const std::vector<double> x = {1, 2, 3};
    const std::vector<double> y = {3, 1, 2};
    const auto m = fit_isotonic(x, y);
    EXPECT_DOUBLE_EQ(m(1), 2.0);
    EXPECT_DOUBLE_EQ(m(2), 2.0);
    EXPECT_DOUBLE_EQ(m(3), 2.0);
}

TEST(Isotonic, MonotoneInputUnchangedAndClampsOutside) {
    const std::vector<double> x = {0.1, 0.4, 0.7};
    const std::vector<double> y = {0.2, 0.5, 0.9};
    const auto m = fit_isotonic(x, y);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(m(x[i]), y[i]);
    EXPECT_DOUBLE_EQ(m(-5.0), 0.2);
    EXPECT_DOUBLE_EQ(m(5.0), 0.9);
}

TEST(Isotonic, ZeroWeightsIgnored) {
    const std::vector<double> x = {1, 2, 3};
    const std::vector<double> y = {0.3, 0.9, 0.1};
    const std::vector<double> w = {1, 0, 0};
    const auto m = fit_isotonic(x, y, w);
    EXPECT_DOUBLE_EQ(m(1), 0.3);
    EXPECT_DOUBLE_EQ(m(3), 0.3);
}

TEST(Isotonic, EmptyInputRaises) {
    const std::vector<double> none;
    EXPECT_THROW(fit_isotonic(none, none), ArgumentError);
}

TEST(Isotonic, MatchesExhaustiveOracle) {
    Rng rng(42);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        std::vector<double> x(n);
        std::vector<double> y(n);
        std::vector<double> w(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = static_cast<double>(i);
            y[i] = rng.uniform();
            w[i] = 0.1 + rng.uniform();
        }
        const auto m = fit_isotonic(x, y, w);
        const auto oracle = brute_force_isotonic(y, w);
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_NEAR(m(x[i]), oracle[i], 1e-9);
            if (i > 0) EXPECT_LE(m(x[i - 1]), m(x[i]));
        }
    }
}

TEST(Calibration, PerfectlyCalibratedBaseUnchanged) {
    // holdout whose empirical frequency at every score equals the score
    Matrix x(20, 1);
    Labels y(20);
    for (int i = 0; i < 20; ++i) {
        x(i, 0) = i < 10 ? 0.2 : 0.8;
        y[static_cast<std::size_t>(i)] = (i < 10 ? (i < 2) : (i < 18)) ? 1 : 0;
    }
    const auto base = std::make_shared<IdentityModel>();
    const auto cal = calibrate(base, x, y);
    const auto p0 = base->predict_proba(x);
    const auto p1 = cal->predict_proba(x);
    EXPECT_LT((p0 - p1).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Calibration, ReducesExpectedCalibrationError) {
    const auto base = std::make_shared<SharpenedModel>();
    const auto [hx, hy] = bernoulli_sample(5000, 1);
    const auto [tx, ty] = bernoulli_sample(5000, 2);
    const auto cal = calibrate(base, hx, hy);
    const double before = expected_calibration_error(base->predict_proba(tx), ty);
    const double after = expected_calibration_error(cal->predict_proba(tx), ty);
    EXPECT_LT(after, before);
}

TEST(Calibration, OneRowHoldoutStillValid) {
    const auto d = make_two_moons(100, 0.2, 3);
    const auto base = fit_gbt(TrainingView{d.features(), d.labels(), 2}, GBTParams{});
    const Matrix one = d.features().topRows(1);
    const Labels y1 = {d.labels()[0]};
    const auto cal = calibrate(base, one, y1);
    EXPECT_FALSE(cal->uncalibrated_classes().empty());
    expect_probability_rows(cal->predict_proba(d.features()));
}

TEST(Calibration, CrossFittedWrapperProducesDistributions) {
    const auto d = make_blobs({{0.0, 0.0}, {2.0, 0.0}, {0.0, 2.0}}, {60, 60, 60}, {0, 1, 2}, 0.9, 4);
    GBTParams gp;
    gp.n_rounds = 20;
    const auto learner = with_calibration(make_gbt_factory(gp), 3, 1);
    const auto model = learner(TrainingView{d.features(), d.labels(), 3});
    expect_probability_rows(model->predict_proba(d.features()));
    EXPECT_GT(cohens_kappa(d.labels(), model->predict(d.features()), 3), 0.5);
}

TEST(Calibration, CrossFittedMapsComeFromOutOfFoldScores) {
    const auto d = make_two_moons(150, 0.3, 6);
    GBTParams gp;
    gp.n_rounds = 10;
    const auto base = make_gbt_factory(gp);
    const auto model = with_calibration(base, 3, 2)(TrainingView{d.features(), d.labels(), 2});

    // rebuild by hand: fold models score their held-out rows, maps fit on those scores
    const auto fold = stratified_folds(d.labels(), 2, 3, 2);
    Matrix oof(static_cast<Eigen::Index>(d.size()), 2);
    for (int f = 0; f < 3; ++f) {
        std::vector<std::size_t> fit_rows;
        std::vector<std::size_t> held;
        for (std::size_t i = 0; i < d.size(); ++i) (fold[i] == f ? held : fit_rows).push_back(i);
        const auto part = d.subset(fit_rows);
        const auto m = base(TrainingView{part.features(), part.labels(), 2});
        const Matrix p = m->predict_proba(take_rows(d.features(), held));
        for (std::size_t j = 0; j < held.size(); ++j) oof.row(static_cast<Eigen::Index>(held[j])) = p.row(static_cast<Eigen::Index>(j));
    }
    Matrix expected = base(TrainingView{d.features(), d.labels(), 2})->predict_proba(d.features());
    for (Eigen::Index i = 0; i < expected.rows(); ++i) {
        double s = 0.0;
        for (int c = 0; c < 2; ++c) {
            std::vector<double> score(d.size());
            std::vector<double> target(d.size());
            for (std::size_t r = 0; r < d.size(); ++r) {
                score[r] = oof(static_cast<Eigen::Index>(r), c);
                target[r] = d.labels()[r] == c ? 1.0 : 0.0;
            }
            expected(i, c) = fit_isotonic(score, target)(expected(i, c));
            s += expected(i, c);
        }
        expected.row(i) /= s;
    }
    EXPECT_LT((model->predict_proba(d.features()) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ModelJson, TreeSerializesAsNestedNodes) {
    const auto d = xor_data();
    const auto tree = fit_decision_tree(TrainingView{d.features(), d.labels(), 2}, TreeParams{});
    const auto j = tree->to_json();
    EXPECT_EQ(j["type"], "decision_tree");
    EXPECT_TRUE(j["root"].contains("left"));
}
