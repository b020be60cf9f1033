#pragma once

#include "biquality/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace biq {

/// Lower/upper bound applied to predicted probabilities before any ratio.
inline constexpr double kProbabilityClip = 1e-6;

inline double clip_probability(double p) { return std::clamp(p, kProbabilityClip, 1.0 - kProbabilityClip); }

/// A fitted classifier producing per-class probability vectors. Every row
/// of predict_proba is nonnegative and sums to one. Fitted models are
/// immutable and may be shared across threads.
class ProbabilisticModel {
public:
    virtual ~ProbabilisticModel() = default;

    virtual int n_classes() const = 0;

    /// n_rows x K probabilities.
    virtual Matrix predict_proba(const Matrix& x) const = 0;

    /// Self-describing JSON (see serialization.hpp for the reader).
    virtual nlohmann::json to_json() const = 0;

    std::vector<int> predict(const Matrix& x) const {
        const Matrix p = predict_proba(x);
        std::vector<int> out(static_cast<std::size_t>(p.rows()));
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            Eigen::Index best = 0;
            p.row(i).maxCoeff(&best);
            out[static_cast<std::size_t>(i)] = static_cast<int>(best);
        }
        return out;
    }
};

using ModelPtr = std::shared_ptr<const ProbabilisticModel>;

/// Everything a learner needs to fit: features, labels in [0, K), and
/// optional per-row weights (empty span = unit weights).
struct TrainingView {
    const Matrix& features;
    std::span<const int> labels;
    int n_classes;
    std::span<const double> weights = {};
};

/// Fits a fresh model. Factories must be pure functions of their input so
/// that the harness stays deterministic.
using LearnerFactory = std::function<ModelPtr(const TrainingView&)>;

/// Returns the same table for every row; used for degenerate fits and tests.
class ConstantModel final : public ProbabilisticModel {
public:
    explicit ConstantModel(std::vector<double> probabilities) : probabilities_(std::move(probabilities)) {
        double s = 0.0;
        for (double p : probabilities_) s += p;
        if (probabilities_.size() < 2 || !(s > 0.0)) throw ArgumentError("ConstantModel: invalid probability vector");
        for (double& p : probabilities_) p /= s;
    }

    int n_classes() const override { return static_cast<int>(probabilities_.size()); }

    Matrix predict_proba(const Matrix& x) const override {
        Matrix p(x.rows(), n_classes());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            for (int k = 0; k < n_classes(); ++k) p(i, k) = probabilities_[static_cast<std::size_t>(k)];
        }
        return p;
    }

    nlohmann::json to_json() const override { return {{"type", "constant"}, {"probabilities", probabilities_}}; }

private:
    std::vector<double> probabilities_;
};

/// Weighted class frequencies (unit weights when `weights` is empty).
inline std::vector<double> weighted_class_totals(std::span<const int> labels, int n_classes,
                                                 std::span<const double> weights) {
    std::vector<double> totals(static_cast<std::size_t>(n_classes), 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        totals[static_cast<std::size_t>(labels[i])] += weights.empty() ? 1.0 : weights[i];
    }
    return totals;
}

inline void check_training_view(const TrainingView& v) {
    if (v.n_classes < 2) throw ArgumentError("learner: n_classes must be >= 2");
    if (static_cast<std::size_t>(v.features.rows()) != v.labels.size()) {
        throw ArgumentError("learner: feature rows and labels differ in length");
    }
    if (!v.weights.empty()) {
        if (v.weights.size() != v.labels.size()) throw ArgumentError("learner: weights not aligned with rows");
        for (double w : v.weights) {
            if (!(w >= 0.0) || !std::isfinite(w)) throw ArgumentError("learner: weights must be finite and >= 0");
        }
    }
    for (int y : v.labels) {
        if (y < 0 || y >= v.n_classes) throw ArgumentError("learner: label out of range");
    }
}

/// Copy of the rows with positive weight, or nullopt when no row has zero
/// weight or every row does. Learners treat a zero-weight row as absent.
struct OwnedTrainingSet {
    Matrix features;
    Labels labels;
    std::vector<double> weights;
    int n_classes = 0;
    TrainingView view() const { return TrainingView{features, labels, n_classes, weights}; }
};

inline std::optional<OwnedTrainingSet> drop_zero_weight_rows(const TrainingView& v) {
    if (v.weights.empty()) return std::nullopt;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < v.weights.size(); ++i) {
        if (v.weights[i] > 0.0) keep.push_back(i);
    }
    if (keep.size() == v.weights.size() || keep.empty()) return std::nullopt;
    OwnedTrainingSet out;
    out.features = take_rows(v.features, keep);
    out.n_classes = v.n_classes;
    for (auto i : keep) {
        out.labels.push_back(v.labels[i]);
        out.weights.push_back(v.weights[i]);
    }
    return out;
}

} // namespace biq
