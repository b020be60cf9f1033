#pragma once

// Discrete biquality worlds with exactly known joint distributions, and
// lookup-table models that play the role of perfect classifiers.

#include "biquality/biquality.hpp"

#include <cmath>
#include <memory>
#include <vector>

namespace biq::testing {

// Row v of the table is the probability vector returned for feature value v.
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

// Trusted and untrusted datasets realizing integer count tables exactly:
// cell (x, y) appears count(x, y) times with feature value x and label y.
struct DiscreteWorld {
    int n_x = 0;
    int n_classes = 0;
    Matrix count_t;
    Matrix count_u;
    double n_t = 0.0;
    double n_u = 0.0;

    static DiscreteWorld random(int n_x, int n_classes, Rng& rng, int max_count = 20) {
        DiscreteWorld w;
        w.n_x = n_x;
        w.n_classes = n_classes;
        w.count_t.resize(n_x, n_classes);
        w.count_u.resize(n_x, n_classes);
        for (int x = 0; x < n_x; ++x) {
            for (int y = 0; y < n_classes; ++y) {
                w.count_t(x, y) = 1.0 + static_cast<double>(rng.below(static_cast<std::size_t>(max_count)));
                w.count_u(x, y) = 1.0 + static_cast<double>(rng.below(static_cast<std::size_t>(max_count)));
            }
        }
        w.n_t = w.count_t.sum();
        w.n_u = w.count_u.sum();
        return w;
    }

    double p_t(int x, int y) const { return count_t(x, y) / n_t; }
    double p_u(int x, int y) const { return count_u(x, y) / n_u; }
    double joint_ratio(int x, int y) const { return p_t(x, y) / p_u(x, y); }

    static Dataset realize(const Matrix& counts) {
        std::vector<double> xs;
        Labels ys;
        for (Eigen::Index x = 0; x < counts.rows(); ++x) {
            for (Eigen::Index y = 0; y < counts.cols(); ++y) {
                for (int c = 0; c < static_cast<int>(counts(x, y)); ++c) {
                    xs.push_back(static_cast<double>(x));
                    ys.push_back(static_cast<int>(y));
                }
            }
        }
        Matrix m(static_cast<Eigen::Index>(xs.size()), 1);
        for (std::size_t i = 0; i < xs.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = xs[i];
        return Dataset(m, ys, static_cast<int>(counts.cols()));
    }

    BiqualityDataset biquality() const { return BiqualityDataset(realize(count_t), realize(count_u)); }

    // P(y | x) under one partition.
    static std::shared_ptr<TableModel> concept_model(const Matrix& counts) {
        Matrix t(counts.rows(), counts.cols());
        for (Eigen::Index x = 0; x < counts.rows(); ++x) t.row(x) = counts.row(x) / counts.row(x).sum();
        return std::make_shared<TableModel>(t);
    }

    // P(S = 1 | x) on the pooled source-labeled set.
    std::shared_ptr<TableModel> source_model() const {
        Matrix t(n_x, 2);
        for (int x = 0; x < n_x; ++x) {
            const double a = count_t.row(x).sum();
            const double b = count_u.row(x).sum();
            t(x, 1) = a / (a + b);
            t(x, 0) = b / (a + b);
        }
        return std::make_shared<TableModel>(t);
    }

    // P(S = 1 | x, y = k) on the class-k source-labeled set.
    std::vector<ModelPtr> class_source_models() const {
        std::vector<ModelPtr> out;
        for (int k = 0; k < n_classes; ++k) {
            Matrix t(n_x, 2);
            for (int x = 0; x < n_x; ++x) {
                const double a = count_t(x, k);
                const double b = count_u(x, k);
                t(x, 1) = a / (a + b);
                t(x, 0) = b / (a + b);
            }
            out.push_back(std::make_shared<TableModel>(t));
        }
        return out;
    }

    // e^k(x) = P_T(x | k) / P_U(x | k), read off the class-k blocks handed
    // to the estimator (they realize the count tables exactly).
    RatioEstimator class_conditional_ratio() const {
        return [n_x = n_x](const Matrix& trusted_x, const Matrix& untrusted_x) {
            std::vector<double> ct(static_cast<std::size_t>(n_x), 0.0);
            std::vector<double> cu(static_cast<std::size_t>(n_x), 0.0);
            for (Eigen::Index i = 0; i < trusted_x.rows(); ++i) ct[static_cast<std::size_t>(std::lround(trusted_x(i, 0)))] += 1.0;
            for (Eigen::Index i = 0; i < untrusted_x.rows(); ++i) cu[static_cast<std::size_t>(std::lround(untrusted_x(i, 0)))] += 1.0;
            std::vector<double> e(static_cast<std::size_t>(untrusted_x.rows()));
            for (Eigen::Index i = 0; i < untrusted_x.rows(); ++i) {
                const auto x = static_cast<std::size_t>(std::lround(untrusted_x(i, 0)));
                e[static_cast<std::size_t>(i)] = (ct[x] / static_cast<double>(trusted_x.rows())) /
                                                 (cu[x] / static_cast<double>(untrusted_x.rows()));
            }
            return WeightVector(std::move(e));
        };
    }
};

} // namespace biq::testing
