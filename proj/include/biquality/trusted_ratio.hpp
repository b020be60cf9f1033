#pragma once

// Learning-curve calibration of the trusted fraction for a target relative
// performance p.

#include "biquality/data.hpp"
#include "biquality/evalstat.hpp"
#include "biquality/model.hpp"

#include <string>
#include <vector>

namespace biq {

inline const std::vector<double>& default_trusted_ratio_grid() {
    static const std::vector<double> grid = {0.005, 0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64, 1.0};
    return grid;
}

struct TrustedRatioCalibration {
    double ratio = 1.0;
    double full_kappa = 0.0;
    std::vector<double> grid;
    std::vector<double> kappas; // per evaluated grid value, in grid order
    std::vector<std::string> flags;
};

namespace detail {
inline double holdout_kappa(const LearnerFactory& learner, const Dataset& fit, const Dataset& val) {
    const auto model = learner(TrainingView{fit.features(), fit.labels(), fit.n_classes()});
    return cohens_kappa(val.labels(), model->predict(val.features()), val.n_classes());
}

// Stratified subsample keeping at least one row per class present.
inline Dataset trusted_subsample(const Dataset& d, double fraction, std::uint64_t seed) {
    if (fraction >= 1.0) return d;
    const auto counts = d.class_counts();
    const auto alloc = stratified_allocation(counts, fraction);
    std::vector<std::vector<std::size_t>> by_class(counts.size());
    for (std::size_t i = 0; i < d.size(); ++i) by_class[static_cast<std::size_t>(d.labels()[i])].push_back(i);
    Rng rng(seed);
    std::vector<std::size_t> rows;
    for (std::size_t k = 0; k < by_class.size(); ++k) {
        rng.shuffle(by_class[k]);
        const auto take = std::max<std::size_t>(by_class[k].empty() ? 0 : 1, alloc[k]);
        rows.insert(rows.end(), by_class[k].begin(), by_class[k].begin() + static_cast<std::ptrdiff_t>(take));
    }
    std::sort(rows.begin(), rows.end());
    return d.subset(rows);
}
} // namespace detail

/// Smallest grid fraction whose stratified subsample reaches kappa >=
/// p * (full-training kappa) on a fixed 75/25 internal validation split.
/// Falls back to the last grid value (flagged) when none qualifies.
inline TrustedRatioCalibration calibrate_trusted_ratio(const Dataset& train, double p, const LearnerFactory& learner,
                                                       const std::vector<double>& grid, std::uint64_t seed) {
    if (grid.empty()) throw ArgumentError("calibrate_trusted_ratio: empty grid");
    if (!(p > 0.0 && p <= 1.0)) throw ArgumentError("calibrate_trusted_ratio: p must be in (0, 1]");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0 && grid[i] <= 1.0)) throw ArgumentError("calibrate_trusted_ratio: grid values must be in (0, 1]");
        if (i > 0 && !(grid[i] > grid[i - 1])) throw ArgumentError("calibrate_trusted_ratio: grid must be ascending");
    }
    const auto [fit, val] = stratified_split(train, 0.75, derive_seed(seed, "validation"));
    TrustedRatioCalibration out;
    out.grid = grid;
    out.full_kappa = detail::holdout_kappa(learner, fit, val);
    const double bar = p * out.full_kappa;
    for (double g : grid) {
        const double kappa = g >= 1.0 ? out.full_kappa
                                      : detail::holdout_kappa(learner, detail::trusted_subsample(fit, g, derive_seed(seed, "subsample", g)), val);
        out.kappas.push_back(kappa);
        if (kappa >= bar) {
            out.ratio = g;
            return out;
        }
    }
    out.ratio = grid.back();
    out.flags.push_back("no_grid_ratio_reached_target");
    return out;
}

} // namespace biq
