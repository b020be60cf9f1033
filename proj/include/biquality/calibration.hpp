#pragma once

// One-vs-rest isotonic calibration of multiclass probabilities, plus the
// cross-fitted calibrating learner wrapper used by the reweighting methods.

#include "biquality/isotonic.hpp"
#include "biquality/model.hpp"

#include <algorithm>
#include <memory>
#include <vector>

namespace biq {

/// Base model whose per-class probabilities pass through one nondecreasing
/// map each and are then renormalized (uniform when every mapped value is 0).
class CalibratedModel final : public ProbabilisticModel {
public:
    CalibratedModel(ModelPtr base, std::vector<IsotonicMap> maps)
        : base_(std::move(base)), maps_(std::move(maps)) {
        if (!base_ || static_cast<int>(maps_.size()) != base_->n_classes()) {
            throw ArgumentError("CalibratedModel: one map per class required");
        }
    }

    int n_classes() const override { return base_->n_classes(); }

    Matrix predict_proba(const Matrix& x) const override { return apply(base_->predict_proba(x)); }

    Matrix apply(Matrix p) const {
        const int k = n_classes();
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            double s = 0.0;
            for (int c = 0; c < k; ++c) {
                p(i, c) = std::max(0.0, maps_[static_cast<std::size_t>(c)](p(i, c)));
                s += p(i, c);
            }
            if (s > 0.0) {
                p.row(i) /= s;
            } else {
                p.row(i).setConstant(1.0 / k);
            }
        }
        return p;
    }

    /// Classes whose map is the identity because the holdout had no positives.
    std::vector<int> uncalibrated_classes() const {
        std::vector<int> out;
        for (std::size_t c = 0; c < maps_.size(); ++c) {
            if (maps_[c].is_identity()) out.push_back(static_cast<int>(c));
        }
        return out;
    }

    const std::vector<IsotonicMap>& maps() const { return maps_; }
    const ModelPtr& base() const { return base_; }

    nlohmann::json to_json() const override {
        nlohmann::json maps = nlohmann::json::array();
        for (const auto& m : maps_) {
            if (m.is_identity()) {
                maps.push_back({{"identity", true}});
            } else {
                maps.push_back({{"breakpoints", m.breakpoints()}, {"values", m.values()}});
            }
        }
        return {{"type", "calibrated"}, {"method", "isotonic_one_vs_rest"}, {"base", base_->to_json()}, {"maps", maps}};
    }

private:
    ModelPtr base_;
    std::vector<IsotonicMap> maps_;
};

/// One isotonic map per class fitted on (p_k, 1[y == k]); classes without
/// positive weight get the identity map.
inline std::vector<IsotonicMap> fit_calibration_maps(const Matrix& scores, std::span<const int> y, std::span<const double> weights = {}) {
    const auto n = y.size();
    if (static_cast<std::size_t>(scores.rows()) != n) throw ArgumentError("calibration: score rows and labels differ");
    std::vector<double> w(n, 1.0);
    if (!weights.empty()) w.assign(weights.begin(), weights.end());
    std::vector<IsotonicMap> maps;
    std::vector<double> score(n);
    std::vector<double> target(n);
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
        double positives = 0.0;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            score[i] = scores(static_cast<Eigen::Index>(i), c);
            target[i] = y[i] == c ? 1.0 : 0.0;
            positives += target[i] * w[i];
            total += w[i];
        }
        if (positives <= 0.0 || total <= 0.0) {
            maps.push_back(IsotonicMap::identity());
        } else {
            maps.push_back(fit_isotonic(score, target, w));
        }
    }
    return maps;
}

/// Calibrates `base` on a holdout that must not overlap its training rows.
inline std::shared_ptr<const CalibratedModel> calibrate(ModelPtr base, const Matrix& holdout_x,
                                                        std::span<const int> holdout_y,
                                                        std::span<const double> holdout_w = {}) {
    if (!base) throw ArgumentError("calibrate: null base model");
    if (static_cast<std::size_t>(holdout_x.rows()) != holdout_y.size()) {
        throw ArgumentError("calibrate: holdout rows and labels differ");
    }
    auto maps = fit_calibration_maps(base->predict_proba(holdout_x), holdout_y, holdout_w);
    return std::make_shared<CalibratedModel>(std::move(base), std::move(maps));
}

/// Stratified fold assignment: rows of each class are shuffled and dealt
/// round-robin, continuing the deal across classes.
inline std::vector<int> stratified_folds(std::span<const int> labels, int n_classes, int folds, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    std::vector<int> fold(labels.size(), 0);
    Rng rng(seed);
    int next = 0;
    for (auto& rows : by_class) {
        rng.shuffle(rows);
        for (auto r : rows) {
            fold[r] = next;
            next = (next + 1) % folds;
        }
    }
    return fold;
}

/// Wraps a learner so that every fit is calibrated by cross-fitting: the
/// isotonic maps are fitted on out-of-fold predictions (each fold scored by
/// a model trained on the other folds) and applied to a model trained on all
/// rows. Falls back to the plain base learner when there are fewer than 2
/// rows per fold.
inline LearnerFactory with_calibration(LearnerFactory base, int folds = 3, std::uint64_t seed = 0) {
    if (folds < 2) throw ArgumentError("with_calibration: folds must be >= 2");
    return [base = std::move(base), folds, seed](const TrainingView& v) -> ModelPtr {
        check_training_view(v);
        const auto n = v.labels.size();
        if (n < static_cast<std::size_t>(2 * folds)) return base(v);
        const auto fold = stratified_folds(v.labels, v.n_classes, folds, seed);
        Matrix out_of_fold(static_cast<Eigen::Index>(n), v.n_classes);
        for (int f = 0; f < folds; ++f) {
            std::vector<std::size_t> fit_rows;
            std::vector<std::size_t> held_rows;
            for (std::size_t i = 0; i < n; ++i) (fold[i] == f ? held_rows : fit_rows).push_back(i);
            std::vector<int> fit_y;
            std::vector<double> fit_w;
            for (auto r : fit_rows) {
                fit_y.push_back(v.labels[r]);
                if (!v.weights.empty()) fit_w.push_back(v.weights[r]);
            }
            const auto member = base(TrainingView{take_rows(v.features, fit_rows), fit_y, v.n_classes, fit_w});
            const Matrix p = member->predict_proba(take_rows(v.features, held_rows));
            for (std::size_t j = 0; j < held_rows.size(); ++j) out_of_fold.row(static_cast<Eigen::Index>(held_rows[j])) = p.row(static_cast<Eigen::Index>(j));
        }
        auto maps = fit_calibration_maps(out_of_fold, v.labels, v.weights);
        return std::make_shared<CalibratedModel>(base(v), std::move(maps));
    };
}

} // namespace biq
