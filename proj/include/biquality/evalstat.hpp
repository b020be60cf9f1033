#pragma once

// Agreement metrics, curve summaries and rank-based comparison tests.

#include "biquality/core.hpp"

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace biq {

/// K x K counts; rows are true classes, columns predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int n_classes) : k_(n_classes), counts_(static_cast<std::size_t>(n_classes * n_classes), 0) {
        if (n_classes < 1) throw ArgumentError("ConfusionMatrix: K must be >= 1");
    }

    ConfusionMatrix(std::span<const int> truth, std::span<const int> predicted, int n_classes) : ConfusionMatrix(n_classes) {
        if (truth.size() != predicted.size()) throw ArgumentError("ConfusionMatrix: length mismatch");
        for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], predicted[i]);
    }

    static ConfusionMatrix from_counts(const std::vector<std::vector<long long>>& rows) {
        ConfusionMatrix cm(static_cast<int>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows.size()) throw ArgumentError("ConfusionMatrix: counts must be square");
            for (std::size_t j = 0; j < rows.size(); ++j) {
                if (rows[i][j] < 0) throw ArgumentError("ConfusionMatrix: negative count");
                cm.counts_[i * rows.size() + j] = rows[i][j];
            }
        }
        return cm;
    }

    void add(int truth, int predicted) {
        if (truth < 0 || truth >= k_ || predicted < 0 || predicted >= k_) throw ArgumentError("ConfusionMatrix: label out of range");
        ++counts_[static_cast<std::size_t>(truth * k_ + predicted)];
    }

    long long operator()(int truth, int predicted) const { return counts_[static_cast<std::size_t>(truth * k_ + predicted)]; }
    int n_classes() const { return k_; }
    long long total() const {
        long long t = 0;
        for (auto c : counts_) t += c;
        return t;
    }

private:
    int k_;
    std::vector<long long> counts_;
};

inline double cohens_kappa(const ConfusionMatrix& cm) {
    const auto total = static_cast<double>(cm.total());
    if (total <= 0.0) throw ArgumentError("cohens_kappa: empty confusion matrix");
    const int k = cm.n_classes();
    double agree = 0.0;
    double chance = 0.0;
    for (int i = 0; i < k; ++i) {
        double row = 0.0;
        double col = 0.0;
        for (int j = 0; j < k; ++j) {
            row += static_cast<double>(cm(i, j));
            col += static_cast<double>(cm(j, i));
        }
        agree += static_cast<double>(cm(i, i));
        chance += row * col;
    }
    const double p_o = agree / total;
    const double p_e = chance / (total * total);
    if (p_e >= 1.0) return 0.0;
    return (p_o - p_e) / (1.0 - p_e);
}

inline double cohens_kappa(std::span<const int> truth, std::span<const int> predicted, int n_classes) {
    return cohens_kappa(ConfusionMatrix(truth, predicted, n_classes));
}

struct CurvePoint {
    double strength = 0.0;
    double metric = 0.0;
};

struct CurveSummary {
    std::vector<CurvePoint> points;
    double auc = 0.0;
};

/// Trapezoidal area divided by the strength range. Strengths must be
/// strictly monotone (either direction).
inline double normalized_auc(std::span<const CurvePoint> points) {
    if (points.size() < 2) throw ArgumentError("normalized_auc: need at least two points");
    const bool increasing = points[1].strength > points[0].strength;
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        const double dx = points[i].strength - points[i - 1].strength;
        if (increasing ? !(dx > 0.0) : !(dx < 0.0)) throw ArgumentError("normalized_auc: strengths not strictly monotone");
        area += 0.5 * (points[i].metric + points[i - 1].metric) * dx;
    }
    return area / (points.back().strength - points.front().strength);
}

inline CurveSummary summarize_curve(std::vector<CurvePoint> points) {
    CurveSummary s;
    s.auc = normalized_auc(points);
    s.points = std::move(points);
    return s;
}

enum class Decision { Reject, Retain };

struct RankTestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    Decision decision = Decision::Retain;
    std::vector<std::string> flags;
};

struct WilcoxonResult : RankTestResult {
    std::size_t n_nonzero = 0;
    double w_plus = 0.0;
    double w_minus = 0.0;
    double median_difference = 0.0;
    bool exact = false;
};

/// Average ranks (1-based) of values in ascending order; ties share the mean rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order = iota_indices(v.size());
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
        i = j + 1;
    }
    return ranks;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Exact two-sided p-value of the signed-rank statistic W+ given the
/// (possibly tied, hence half-integer) ranks: 2 * min tail over the 2^n
/// equally likely sign assignments, capped at 1.
inline double wilcoxon_exact_p(std::span<const double> ranks, double w_plus) {
    // doubled ranks are integers even with ties
    std::vector<int> r2;
    int total = 0;
    for (double r : ranks) {
        r2.push_back(static_cast<int>(std::lround(2.0 * r)));
        total += r2.back();
    }
    std::vector<double> ways(static_cast<std::size_t>(total + 1), 0.0);
    ways[0] = 1.0;
    int reach = 0;
    for (int r : r2) {
        for (int s = reach; s >= 0; --s) {
            if (ways[static_cast<std::size_t>(s)] != 0.0) ways[static_cast<std::size_t>(s + r)] += ways[static_cast<std::size_t>(s)];
        }
        reach += r;
    }
    const int t = static_cast<int>(std::lround(2.0 * w_plus));
    double lower = 0.0;
    double upper = 0.0;
    double all = 0.0;
    for (int s = 0; s <= total; ++s) {
        const double c = ways[static_cast<std::size_t>(s)];
        all += c;
        if (s <= t) lower += c;
        if (s >= t) upper += c;
    }
    return std::min(1.0, 2.0 * std::min(lower, upper) / all);
}

/// Paired two-sided signed-rank test on a - b.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, double alpha = 0.05) {
    if (a.size() != b.size()) throw ArgumentError("wilcoxon: length mismatch");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("wilcoxon: alpha must be in (0, 1)");
    WilcoxonResult res;
    std::vector<double> diff;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d != 0.0) diff.push_back(d);
    }
    res.n_nonzero = diff.size();
    res.median_difference = median(diff);
    if (diff.empty()) {
        res.flags.push_back("all_differences_zero");
        return res;
    }
    std::vector<double> mag(diff.size());
    for (std::size_t i = 0; i < diff.size(); ++i) mag[i] = std::abs(diff[i]);
    const auto ranks = average_ranks(mag);
    for (std::size_t i = 0; i < diff.size(); ++i) (diff[i] > 0.0 ? res.w_plus : res.w_minus) += ranks[i];
    res.statistic = std::min(res.w_plus, res.w_minus);
    const auto n = diff.size();
    if (n <= 20) {
        res.exact = true;
        res.p_value = wilcoxon_exact_p(ranks, res.w_plus);
    } else {
        const double nd = static_cast<double>(n);
        const double mean = nd * (nd + 1.0) / 4.0;
        double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0;
        // tie correction
        std::map<double, int> groups;
        for (double r : ranks) ++groups[r];
        for (const auto& [r, t] : groups) {
            const double td = t;
            var -= (td * td * td - td) / 48.0;
        }
        const double dev = std::abs(res.w_plus - mean);
        const double z = var > 0.0 ? std::max(0.0, dev - 0.5) / std::sqrt(var) : 0.0;
        res.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), z)));
    }
    if (n < 5) {
        res.flags.push_back("fewer_than_5_nonzero_differences");
        return res;
    }
    res.decision = res.p_value < alpha ? Decision::Reject : Decision::Retain;
    return res;
}

enum class Outcome { Win, Tie, Loss };

inline Outcome outcome_of(const WilcoxonResult& r) {
    if (r.decision == Decision::Reject && r.median_difference > 0.0) return Outcome::Win;
    if (r.decision == Decision::Reject && r.median_difference < 0.0) return Outcome::Loss;
    return Outcome::Tie;
}

inline const char* outcome_name(Outcome o) {
    switch (o) {
    case Outcome::Win: return "win";
    case Outcome::Loss: return "loss";
    case Outcome::Tie: break;
    }
    return "tie";
}

inline const char* outcome_symbol(Outcome o) {
    switch (o) {
    case Outcome::Win: return "∘";
    case Outcome::Loss: return "•";
    case Outcome::Tie: break;
    }
    return "·";
}

namespace detail {
// q_alpha(k) / sqrt(2) of the studentized range with infinite df, k = 2..20.
inline constexpr std::array<double, 19> kNemenyiQ05 = {
    1.959964, 2.343701, 2.569032, 2.727774, 2.849705, 2.948320, 3.030878, 3.101730, 3.163684, 3.218654,
    3.268004, 3.312739, 3.353618, 3.391230, 3.426041, 3.458425, 3.488685, 3.517073, 3.543799};
inline constexpr std::array<double, 19> kNemenyiQ10 = {
    1.644854, 2.052293, 2.291341, 2.459516, 2.588521, 2.692732, 2.779884, 2.854606, 2.919889, 2.977768,
    3.029694, 3.076733, 3.119693, 3.159199, 3.195743, 3.229723, 3.261461, 3.291224, 3.319233};
} // namespace detail

/// Nemenyi critical value q_alpha / sqrt(2) for k methods.
inline double nemenyi_q(int k, double alpha) {
    if (k < 2 || k > 20) throw ArgumentError("nemenyi_q: k must be in [2, 20]");
    const auto idx = static_cast<std::size_t>(k - 2);
    if (std::abs(alpha - 0.05) < 1e-12) return detail::kNemenyiQ05[idx];
    if (std::abs(alpha - 0.10) < 1e-12) return detail::kNemenyiQ10[idx];
    throw ArgumentError("nemenyi_q: only alpha 0.05 and 0.10 are tabulated");
}

inline double critical_difference(int k, int n_datasets, double alpha = 0.05) {
    if (n_datasets < 1) throw ArgumentError("critical_difference: need datasets");
    const double kd = k;
    return nemenyi_q(k, alpha) * std::sqrt(kd * (kd + 1.0) / (6.0 * n_datasets));
}

struct FriedmanResult {
    RankTestResult test; // statistic is the Iman-Davenport F
    double chi_square = 0.0;
    double critical_difference = 0.0;
    std::vector<double> mean_ranks;
    int n_methods = 0;
    int n_datasets = 0;
};

/// scores[m][d]: score of method m on dataset d; higher is better (rank 1).
inline FriedmanResult friedman_nemenyi(const std::vector<std::vector<double>>& scores, double alpha = 0.05) {
    const auto k = scores.size();
    if (k < 3) throw ArgumentError("friedman_nemenyi: need at least 3 methods");
    const auto n = scores.front().size();
    if (n < 2) throw ArgumentError("friedman_nemenyi: need at least 2 datasets");
    for (const auto& s : scores) {
        if (s.size() != n) throw ArgumentError("friedman_nemenyi: ragged score matrix");
    }
    FriedmanResult res;
    res.n_methods = static_cast<int>(k);
    res.n_datasets = static_cast<int>(n);
    res.mean_ranks.assign(k, 0.0);
    std::vector<double> col(k);
    for (std::size_t d = 0; d < n; ++d) {
        for (std::size_t m = 0; m < k; ++m) col[m] = -scores[m][d];
        const auto r = average_ranks(col);
        for (std::size_t m = 0; m < k; ++m) res.mean_ranks[m] += r[m];
    }
    for (auto& r : res.mean_ranks) r /= static_cast<double>(n);

    const double kd = static_cast<double>(k);
    const double nd = static_cast<double>(n);
    double sum_sq = 0.0;
    for (double r : res.mean_ranks) sum_sq += r * r;
    res.chi_square = std::max(0.0, 12.0 * nd / (kd * (kd + 1.0)) * (sum_sq - kd * (kd + 1.0) * (kd + 1.0) / 4.0));
    const double denom = nd * (kd - 1.0) - res.chi_square;
    if (res.chi_square <= 1e-12) {
        res.test.statistic = 0.0;
        res.test.p_value = 1.0;
    } else if (denom <= 1e-12) {
        res.test.statistic = std::numeric_limits<double>::infinity();
        res.test.p_value = 0.0;
    } else {
        res.test.statistic = (nd - 1.0) * res.chi_square / denom;
        const boost::math::fisher_f dist(kd - 1.0, (kd - 1.0) * (nd - 1.0));
        res.test.p_value = std::clamp(boost::math::cdf(boost::math::complement(dist, res.test.statistic)), 0.0, 1.0);
    }
    res.test.decision = res.test.p_value < alpha ? Decision::Reject : Decision::Retain;
    res.critical_difference = critical_difference(static_cast<int>(k), static_cast<int>(n), alpha);
    return res;
}

} // namespace biq
