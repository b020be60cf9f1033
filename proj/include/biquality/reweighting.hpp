#pragma once

// Importance reweighting for biquality data. Every method assigns weight 1
// to trusted rows and an estimate of P_T(x, y) / P_U(x, y) to untrusted
// rows, then fits the final learner on the pooled, weighted data.
//
//   IRBL   P_T(y|x) / P_U(y|x)                      concept term only
//   IRBL2  IRBL * P(S=1|x) / P(S=0|x) * |U|/|T|     concept x covariate
//   PDR    P(S=1|x) / P(S=0|x) * |U|/|T|            covariate term only
//   K-DR   e_y(x) * (|T_y|/|T|) * (|U|/|U_y|)       per-class ratio e_y
//   K-PDR  P(S=1|x,y) / P(S=0|x,y) * |U|/|T|        per-class source odds
//   K-KMM  K-DR with kernel mean matching as e_y

#include "biquality/calibration.hpp"
#include "biquality/data.hpp"
#include "biquality/density_ratio.hpp"
#include "biquality/model.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace biq {

enum class Method { IRBL, IRBL2, PDR, KPDR, KKMM, NoCorrection, TrustedOnly };

inline constexpr std::array<Method, 7> kAllMethods = {Method::IRBL,  Method::IRBL2,        Method::PDR,
                                                      Method::KPDR,  Method::KKMM,         Method::NoCorrection,
                                                      Method::TrustedOnly};

inline std::string_view method_name(Method m) {
    switch (m) {
    case Method::IRBL: return "IRBL";
    case Method::IRBL2: return "IRBL2";
    case Method::PDR: return "PDR";
    case Method::KPDR: return "K-PDR";
    case Method::KKMM: return "K-KMM";
    case Method::NoCorrection: return "NoCorrection";
    case Method::TrustedOnly: return "TrustedOnly";
    }
    return "?";
}

inline Method parse_method(std::string_view name) {
    for (Method m : kAllMethods) {
        if (method_name(m) == name) return m;
    }
    throw ArgumentError("unknown reweighting method '" + std::string(name) + "'");
}

struct ReweightingMethod {
    Method name = Method::NoCorrection;
    /// Cross-fitted isotonic calibration of f_T, f_U, f_S and f_S^k.
    bool calibrate = true;
    int calibration_folds = 3;
    KMMParams kmm;
};

struct BiqualityWeights {
    WeightVector trusted;
    WeightVector untrusted;
    std::vector<std::string> flags;

    /// Trusted weights followed by untrusted weights (BiqualityDataset::pooled order).
    WeightVector pooled() const {
        std::vector<double> all(trusted.begin(), trusted.end());
        all.insert(all.end(), untrusted.begin(), untrusted.end());
        return WeightVector(std::move(all));
    }
};

/// Pooled rows, their weights, and per-row provenance (1 = trusted).
struct ReweightedTrainingSet {
    Dataset pooled;
    WeightVector weights;
    std::vector<int> source;

    ReweightedTrainingSet(const BiqualityDataset& biq, const BiqualityWeights& w)
        : pooled(biq.pooled()), weights(w.pooled()) {
        if (w.trusted.size() != biq.trusted.size() || w.untrusted.size() != biq.untrusted.size()) {
            throw ArgumentError("weights not aligned with biquality partitions");
        }
        for (double t : w.trusted) {
            if (t != 1.0) throw ArgumentError("trusted rows must carry weight 1");
        }
        source.assign(biq.trusted.size(), 1);
        source.resize(pooled.size(), 0);
    }
};

// ---- per-sample weight formulas (probabilities are clipped first) ----

inline double irbl_weight(double trusted_concept, double untrusted_concept) {
    return clip_probability(trusted_concept) / clip_probability(untrusted_concept);
}

inline double irbl2_weight(double trusted_concept, double untrusted_concept, double p_source_trusted,
                           double p_source_untrusted, std::size_t n_trusted, std::size_t n_untrusted) {
    return irbl_weight(trusted_concept, untrusted_concept) *
           source_odds_weight(p_source_trusted, p_source_untrusted, n_trusted, n_untrusted);
}

inline double kdr_weight(double class_ratio, std::size_t n_trusted_class, std::size_t n_trusted,
                         std::size_t n_untrusted, std::size_t n_untrusted_class) {
    return class_ratio * (static_cast<double>(n_trusted_class) / static_cast<double>(n_trusted)) *
           (static_cast<double>(n_untrusted) / static_cast<double>(n_untrusted_class));
}

inline double kpdr_weight(double p_source_trusted, double p_source_untrusted, std::size_t n_trusted,
                          std::size_t n_untrusted) {
    return source_odds_weight(p_source_trusted, p_source_untrusted, n_trusted, n_untrusted);
}

namespace detail {

inline std::vector<std::string> absent_class_flags(const BiqualityDataset& biq, std::string_view consequence) {
    std::vector<std::string> flags;
    const auto t = biq.trusted.class_counts();
    const auto u = biq.untrusted.class_counts();
    for (std::size_t k = 0; k < t.size(); ++k) {
        if (t[k] == 0 && u[k] > 0) {
            flags.push_back("class_" + std::to_string(k) + "_absent_from_trusted:" + std::string(consequence));
        }
    }
    return flags;
}

inline ModelPtr fit_on(const Dataset& d, const LearnerFactory& learner) {
    return learner(TrainingView{d.features(), d.labels(), d.n_classes()});
}

inline std::vector<std::vector<std::size_t>> rows_by_class(const Dataset& d) {
    std::vector<std::vector<std::size_t>> rows(static_cast<std::size_t>(d.n_classes()));
    for (std::size_t i = 0; i < d.size(); ++i) rows[static_cast<std::size_t>(d.labels()[i])].push_back(i);
    return rows;
}

} // namespace detail

// ---- model-level estimators: probability models are supplied ----

/// Concept-ratio weights given fitted trusted/untrusted concept models.
inline BiqualityWeights irbl_weights(const BiqualityDataset& biq, const ProbabilisticModel& f_trusted,
                                     const ProbabilisticModel& f_untrusted) {
    const Matrix& x = biq.untrusted.features();
    const Matrix pt = f_trusted.predict_proba(x);
    const Matrix pu = f_untrusted.predict_proba(x);
    std::vector<double> w(biq.untrusted.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const int y = biq.untrusted.labels()[i];
        w[i] = cap_weight(irbl_weight(pt(r, y), pu(r, y)));
    }
    return {WeightVector::ones(biq.trusted.size()), WeightVector(std::move(w)),
            detail::absent_class_flags(biq, "clipped_floor_probability")};
}

inline BiqualityWeights irbl2_weights(const BiqualityDataset& biq, const ProbabilisticModel& f_trusted,
                                      const ProbabilisticModel& f_untrusted, const ProbabilisticModel& f_source) {
    const Matrix& x = biq.untrusted.features();
    const Matrix pt = f_trusted.predict_proba(x);
    const Matrix pu = f_untrusted.predict_proba(x);
    const Matrix ps = f_source.predict_proba(x);
    std::vector<double> w(biq.untrusted.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const int y = biq.untrusted.labels()[i];
        w[i] = cap_weight(irbl2_weight(pt(r, y), pu(r, y), ps(r, 1), ps(r, 0), biq.trusted.size(), biq.untrusted.size()));
    }
    return {WeightVector::ones(biq.trusted.size()), WeightVector(std::move(w)),
            detail::absent_class_flags(biq, "clipped_floor_probability")};
}

inline BiqualityWeights pdr_weights(const BiqualityDataset& biq, const ProbabilisticModel& f_source) {
    return {WeightVector::ones(biq.trusted.size()),
            pdr_weights_from_model(f_source, biq.untrusted.features(), biq.trusted.size(), biq.untrusted.size()),
            {}};
}

/// Per-class source-odds weights; `class_source_models[k]` was trained on
/// trusted (s=1) vs untrusted (s=0) rows of class k. A null entry marks a
/// class without trusted rows; its untrusted rows get weight 0.
inline BiqualityWeights kpdr_weights(const BiqualityDataset& biq, const std::vector<ModelPtr>& class_source_models) {
    if (class_source_models.size() != static_cast<std::size_t>(biq.n_classes())) {
        throw ArgumentError("kpdr_weights: one source model per class required");
    }
    const auto rows = detail::rows_by_class(biq.untrusted);
    std::vector<double> w(biq.untrusted.size(), 0.0);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k].empty() || !class_source_models[k]) continue;
        const Matrix p = class_source_models[k]->predict_proba(take_rows(biq.untrusted.features(), rows[k]));
        for (std::size_t i = 0; i < rows[k].size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            w[rows[k][i]] = cap_weight(kpdr_weight(p(r, 1), p(r, 0), biq.trusted.size(), biq.untrusted.size()));
        }
    }
    return {WeightVector::ones(biq.trusted.size()), WeightVector(std::move(w)),
            detail::absent_class_flags(biq, "weight_zero")};
}

// ---- learner-level estimators: models are fitted here ----

inline BiqualityWeights irbl_weights(const BiqualityDataset& biq, const LearnerFactory& learner) {
    const ModelPtr f_t = detail::fit_on(biq.trusted, learner);
    const ModelPtr f_u = detail::fit_on(biq.untrusted, learner);
    return irbl_weights(biq, *f_t, *f_u);
}

inline BiqualityWeights irbl2_weights(const BiqualityDataset& biq, const LearnerFactory& learner) {
    const ModelPtr f_t = detail::fit_on(biq.trusted, learner);
    const ModelPtr f_u = detail::fit_on(biq.untrusted, learner);
    const ModelPtr f_s = fit_source_classifier(biq.trusted.features(), biq.untrusted.features(), learner);
    return irbl2_weights(biq, *f_t, *f_u, *f_s);
}

inline BiqualityWeights pdr_biquality_weights(const BiqualityDataset& biq, const LearnerFactory& learner) {
    const ModelPtr f_s = fit_source_classifier(biq.trusted.features(), biq.untrusted.features(), learner);
    return pdr_weights(biq, *f_s);
}

/// Generic K-DR: a class-conditional ratio estimate per class, corrected by
/// the empirical class priors of both partitions.
inline BiqualityWeights kdr_weights(const BiqualityDataset& biq, const RatioEstimator& estimator) {
    const auto t_rows = detail::rows_by_class(biq.trusted);
    const auto u_rows = detail::rows_by_class(biq.untrusted);
    std::vector<double> w(biq.untrusted.size(), 0.0);
    for (std::size_t k = 0; k < u_rows.size(); ++k) {
        if (u_rows[k].empty() || t_rows[k].empty()) continue;
        const WeightVector e = estimator(take_rows(biq.trusted.features(), t_rows[k]),
                                         take_rows(biq.untrusted.features(), u_rows[k]));
        if (e.size() != u_rows[k].size()) throw Error("ratio estimator returned misaligned weights");
        for (std::size_t i = 0; i < u_rows[k].size(); ++i) {
            w[u_rows[k][i]] = cap_weight(kdr_weight(e[i], t_rows[k].size(), biq.trusted.size(), biq.untrusted.size(),
                                                    u_rows[k].size()));
        }
    }
    return {WeightVector::ones(biq.trusted.size()), WeightVector(std::move(w)),
            detail::absent_class_flags(biq, "weight_zero")};
}

inline BiqualityWeights kpdr_weights(const BiqualityDataset& biq, const LearnerFactory& learner) {
    const auto t_rows = detail::rows_by_class(biq.trusted);
    const auto u_rows = detail::rows_by_class(biq.untrusted);
    std::vector<ModelPtr> models(t_rows.size());
    for (std::size_t k = 0; k < t_rows.size(); ++k) {
        if (t_rows[k].empty() || u_rows[k].empty()) continue;
        models[k] = fit_source_classifier(take_rows(biq.trusted.features(), t_rows[k]),
                                          take_rows(biq.untrusted.features(), u_rows[k]), learner);
    }
    return kpdr_weights(biq, models);
}

inline BiqualityWeights kkmm_weights(const BiqualityDataset& biq, const KMMParams& params) {
    return kdr_weights(biq, make_kmm_estimator(params));
}

/// Weights for any method. NoCorrection gives all ones; TrustedOnly gives
/// zero weight to every untrusted row.
inline BiqualityWeights compute_weights(const BiqualityDataset& biq, const ReweightingMethod& method,
                                        const LearnerFactory& base_learner, std::uint64_t seed = 0) {
    const LearnerFactory estimator =
        method.calibrate ? with_calibration(base_learner, method.calibration_folds, seed) : base_learner;
    switch (method.name) {
    case Method::IRBL: return irbl_weights(biq, estimator);
    case Method::IRBL2: return irbl2_weights(biq, estimator);
    case Method::PDR: return pdr_biquality_weights(biq, estimator);
    case Method::KPDR: return kpdr_weights(biq, estimator);
    case Method::KKMM: {
        KMMParams params = method.kmm;
        params.seed = derive_seed(seed, params.seed);
        return kkmm_weights(biq, params);
    }
    case Method::NoCorrection:
        return {WeightVector::ones(biq.trusted.size()), WeightVector::ones(biq.untrusted.size()), {}};
    case Method::TrustedOnly:
        return {WeightVector::ones(biq.trusted.size()), WeightVector(std::vector<double>(biq.untrusted.size(), 0.0)), {}};
    }
    throw ArgumentError("unhandled method");
}

struct TrainedModel {
    ModelPtr model;
    std::optional<BiqualityWeights> weights;
    std::vector<std::string> flags;
};

/// Fits the final (uncalibrated) model for a method.
inline TrainedModel train_with_method(const BiqualityDataset& biq, const ReweightingMethod& method,
                                      const LearnerFactory& base_learner, std::uint64_t seed = 0) {
    TrainedModel out;
    if (method.name == Method::TrustedOnly) {
        out.model = detail::fit_on(biq.trusted, base_learner);
        return out;
    }
    const Dataset pooled = biq.pooled();
    if (method.name == Method::NoCorrection) {
        out.model = detail::fit_on(pooled, base_learner);
        return out;
    }
    BiqualityWeights w = compute_weights(biq, method, base_learner, seed);
    ReweightedTrainingSet set(biq, w);
    out.model = base_learner(TrainingView{set.pooled.features(), set.pooled.labels(), set.pooled.n_classes(), set.weights.span()});
    out.flags = w.flags;
    out.weights = std::move(w);
    return out;
}

} // namespace biq
