#include "biquality/biquality.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace biq;
using namespace biq::testing;

namespace {

// Binary source classifier returning a fixed P(S=1|x) everywhere.
class FixedSourceModel final : public ProbabilisticModel {
public:
    explicit FixedSourceModel(double p1) : p1_(p1) {}
    int n_classes() const override { return 2; }
    Matrix predict_proba(const Matrix& x) const override {
        Matrix p(x.rows(), 2);
        p.col(0).setConstant(1.0 - p1_);
        p.col(1).setConstant(p1_);
        return p;
    }
    nlohmann::json to_json() const override { return {{"type", "fixed"}}; }

private:
    double p1_;
};

// Posterior lookup on a discrete domain: feature value v selects row v.
class TableModel final : public ProbabilisticModel {
public:
    explicit TableModel(Matrix table) : table_(std::move(table)) {}
    int n_classes() const override { return static_cast<int>(table_.cols()); }
    Matrix predict_proba(const Matrix& x) const override {
        Matrix p(x.rows(), table_.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) p.row(i) = table_.row(static_cast<Eigen::Index>(std::lround(x(i, 0))));
        return p;
    }
    nlohmann::json to_json() const override { return {{"type", "table"}}; }

private:
    Matrix table_;
};

Matrix column(std::initializer_list<double> v) {
    Matrix m(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v) m(i++, 0) = x;
    return m;
}


} // namespace

TEST(RbfKernel, ClosedForms) {
    const std::vector<double> a = {1.0, 2.0};
    const std::vector<double> b = {1.0, 3.0};
    EXPECT_DOUBLE_EQ(rbf_kernel(a, a, 0.7), 1.0);
    EXPECT_NEAR(rbf_kernel(a, b, 1.0), std::exp(-1.0), 1e-15);
    EXPECT_NEAR(rbf_kernel(a, b, 1.0), 0.367879, 1e-6);
    EXPECT_DOUBLE_EQ(default_rbf_gamma(4), 0.25);
}

TEST(RbfKernel, RejectsBadInput) {
    const std::vector<double> a = {1.0, 2.0};
    const std::vector<double> b = {1.0};
    EXPECT_THROW(rbf_kernel(a, b, 1.0), ArgumentError);
    EXPECT_THROW(rbf_kernel(a, a, 0.0), ArgumentError);
}

TEST(Pdr, UninformativeSourceClassifierGivesUnitWeights) {
    const Matrix u = Matrix::Zero(900, 1);
    const auto w = pdr_weights_from_model(FixedSourceModel(100.0 / 1000.0), u, 100, 900);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], 1.0, 1e-12);
}

TEST(Pdr, EvenOddsScaleByPriorRatio) {
    const Matrix u = Matrix::Zero(3, 1);
    const auto w = pdr_weights_from_model(FixedSourceModel(0.5), u, 100, 900);
    EXPECT_NEAR(w[0], 9.0, 1e-12);
}

TEST(Pdr, OracleSourceClassifierRecoversDiscreteRatio) {
    // three-point domain; trusted and untrusted counts per point
    const std::vector<double> nt = {10, 30, 60};
    const std::vector<double> nu = {50, 25, 25};
    const double total_t = 100;
    const double total_u = 100 * 3; // untrusted counts replicated three times
    Matrix table(3, 2);
    for (int v = 0; v < 3; ++v) {
        const double t = nt[static_cast<std::size_t>(v)];
        const double u = 3 * nu[static_cast<std::size_t>(v)];
        table(v, 1) = t / (t + u);
        table(v, 0) = u / (t + u);
    }
    const auto w = pdr_weights_from_model(TableModel(table), column({0, 1, 2}), static_cast<std::size_t>(total_t),
                                          static_cast<std::size_t>(total_u));
    for (int v = 0; v < 3; ++v) {
        const double truth = (nt[static_cast<std::size_t>(v)] / total_t) / (3 * nu[static_cast<std::size_t>(v)] / total_u);
        EXPECT_NEAR(w[static_cast<std::size_t>(v)], truth, 1e-12);
    }
}

TEST(Pdr, IidSourcesGiveNearUnitWeightsAndUnchangedKappa) {
    const auto d = make_two_moons(2500, 0.2, 31);
    const auto [train, test] = stratified_split(d, 0.8, 5);
    const auto [t, u] = stratified_split(train, 0.5, 6);
    const BiqualityDataset biq(t, u);
    GBTParams gp;
    gp.n_rounds = 50;
    const auto learner = make_gbt_factory(gp);
    const auto w = pdr_weights(biq, with_calibration(learner, 3, 1));
    EXPECT_GE(w.mean(), 0.8);
    EXPECT_LE(w.mean(), 1.25);

    ReweightingMethod none{Method::NoCorrection};
    ReweightingMethod pdr{Method::PDR};
    const auto base = train_with_method(biq, none, learner, 1);
    const auto corrected = train_with_method(biq, pdr, learner, 1);
    const double k0 = cohens_kappa(test.labels(), base.model->predict(test.features()), 2);
    const double k1 = cohens_kappa(test.labels(), corrected.model->predict(test.features()), 2);
    EXPECT_LE(std::abs(k0 - k1), 0.02);
}

TEST(Kmm, IdenticalSetsGiveUnitWeights) {
    const auto d = make_two_moons(80, 0.2, 3);
    const auto res = kmm_weights(d.features(), d.features(), KMMParams{});
    for (std::size_t i = 0; i < res.weights.size(); ++i) EXPECT_NEAR(res.weights[i], 1.0, 1e-3);
}

TEST(Kmm, ToyMatchesGridOracleAndFavorsTrustedSupport) {
    const Matrix u = column({-1, -1, -1, -1, 1, 1, 1, 1});
    const Matrix t = column({1, 1, 1, 1});
    KMMParams params;
    params.gamma = 1.0;
    params.upper_bound = 5.0;
    params.epsilon = 0.01;
    const auto res = kmm_weights(t, u, params);
    ASSERT_TRUE(res.converged);
    const Matrix gram = rbf_gram(u, u, 1.0);
    const Eigen::VectorXd kappa = rbf_gram(u, t, 1.0).rowwise().sum() * (8.0 / 4.0);
    Eigen::VectorXd beta(8);
    for (Eigen::Index i = 0; i < 8; ++i) beta(i) = res.weights[static_cast<std::size_t>(i)];
    double a = 0.0;
    double b = 0.0;
    const double oracle = toy_grid_optimum(gram, kappa, 5.0, 0.01, a, b);
    EXPECT_NEAR(kmm_qp_objective(gram, kappa, beta), oracle, 1e-4);
    const double low = std::max({beta(0), beta(1), beta(2), beta(3)});
    const double high = std::min({beta(4), beta(5), beta(6), beta(7)});
    EXPECT_GE(high, 3.0 * low);
    EXPECT_GT(high, 0.0);
}

TEST(Kmm, ConstraintsHoldAndObjectiveNonincreasing) {
    const auto t = make_blobs({{0.0, 0.0}}, {60}, {0}, 1.0, 1).features();
    const auto u = make_blobs({{1.0, 0.5}, {-2.0, 0.0}}, {90, 60}, {0, 0}, 1.0, 2).features();
    for (double upper : {1.0, 3.0, 1000.0}) {
        KMMParams params;
        params.upper_bound = upper;
        params.epsilon = 0.05;
        const auto res = kmm_weights(t, u, params);
        ASSERT_EQ(res.batches.size(), 2u);
        for (std::size_t i = 0; i < res.weights.size(); ++i) {
            EXPECT_GE(res.weights[i], 0.0);
            EXPECT_LE(res.weights[i], upper);
        }
        for (const auto& tr : res.batches) {
            for (std::size_t i = 1; i < tr.objective.size(); ++i) EXPECT_LE(tr.objective[i], tr.objective[i - 1]);
        }
    }
}

TEST(Kmm, SlabRespectedPerBatch) {
    const auto t = make_blobs({{0.0, 0.0}}, {40}, {0}, 1.0, 4).features();
    const auto u = make_blobs({{3.0, 0.0}}, {70}, {0}, 1.0, 5).features();
    KMMParams params;
    params.epsilon = 0.1;
    const auto res = kmm_weights(t, u, params);
    EXPECT_LE(std::abs(res.weights.mean() - 1.0), 0.1 + 1e-6);
}

TEST(Kmm, PermutationEquivariantInSingleBatch) {
    const auto t = make_blobs({{0.0, 0.0}}, {30}, {0}, 1.0, 7).features();
    const auto u = make_blobs({{1.0, 1.0}}, {50}, {0}, 1.0, 8).features();
    auto perm = iota_indices(50);
    Rng rng(9);
    rng.shuffle(perm);
    const auto a = kmm_weights(t, u, KMMParams{});
    const auto b = kmm_weights(t, take_rows(u, perm), KMMParams{});
    for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_NEAR(b.weights[i], a.weights[perm[i]], 1e-6);
}

TEST(Kmm, InvalidParamsRejected) {
    KMMParams params;
    params.upper_bound = 0.0;
    EXPECT_THROW(kmm_weights(column({1}), column({1}), params), ArgumentError);
    params = {};
    params.gamma = -1.0;
    EXPECT_THROW(kmm_weights(column({1}), column({1}), params), ArgumentError);
}

TEST(WeightVector, CsvRoundTrip) {
    const WeightVector w({0.0, 1.5, 1e-7, 999.25});
    std::stringstream buf;
    write_weights_csv(buf, w);
    const auto back = read_weights_csv(buf);
    EXPECT_EQ(back.values(), w.values());
    EXPECT_THROW(WeightVector({-1.0}), ArgumentError);
}
