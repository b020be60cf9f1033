#pragma once

// Covariate-shift density ratio estimation P_T(x) / P_U(x):
//  - probabilistic (discriminative) ratio from a trusted-vs-untrusted
//    source classifier,
//  - kernel mean matching solved as a box + slab constrained QP by
//    projected gradient, optionally on batches (ensemble KMM).

#include "biquality/data.hpp"
#include "biquality/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace biq {

/// Cap applied to every final importance weight.
inline constexpr double kMaxWeight = 1000.0;

/// Nonnegative, finite per-row importance weights.
class WeightVector {
public:
    WeightVector() = default;
    explicit WeightVector(std::vector<double> values) : values_(std::move(values)) {
        for (double v : values_) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw ArgumentError("WeightVector: weights must be finite and >= 0");
        }
    }
    static WeightVector ones(std::size_t n) { return WeightVector(std::vector<double>(n, 1.0)); }

    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }
    double operator[](std::size_t i) const { return values_[i]; }
    const std::vector<double>& values() const { return values_; }
    std::span<const double> span() const { return values_; }
    auto begin() const { return values_.begin(); }
    auto end() const { return values_.end(); }

    double mean() const {
        if (values_.empty()) return 0.0;
        double s = 0.0;
        for (double v : values_) s += v;
        return s / static_cast<double>(values_.size());
    }

private:
    std::vector<double> values_;
};

/// Single-column CSV (header "weight"), one row per untrusted sample.
inline void write_weights_csv(std::ostream& out, const WeightVector& w) {
    out << "weight\n";
    for (double v : w) out << format_double(v) << '\n';
}

inline WeightVector read_weights_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("weights CSV: missing header");
    std::vector<double> values;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
        if (ec != std::errc{} || ptr != line.data() + line.size()) {
            throw ParseError("weights CSV row " + std::to_string(row) + ": not a number", row);
        }
        values.push_back(v);
    }
    return WeightVector(std::move(values));
}

inline double cap_weight(double w) { return std::clamp(w, 0.0, kMaxWeight); }

/// exp(-gamma * ||a - b||^2)
inline double rbf_kernel(std::span<const double> a, std::span<const double> b, double gamma) {
    if (a.size() != b.size()) throw ArgumentError("rbf_kernel: dimension mismatch");
    if (!(gamma > 0.0)) throw ArgumentError("rbf_kernel: gamma must be > 0");
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
    return std::exp(-gamma * d2);
}

/// 1 / n_features.
inline double default_rbf_gamma(Eigen::Index n_features) {
    if (n_features < 1) throw ArgumentError("default_rbf_gamma: no features");
    return 1.0 / static_cast<double>(n_features);
}

inline Matrix rbf_gram(const Matrix& a, const Matrix& b, double gamma) {
    Matrix g(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.rows(); ++j) g(i, j) = std::exp(-gamma * (a.row(i) - b.row(j)).squaredNorm());
    }
    return g;
}

/// P(S=1|x)/P(S=0|x) * n_untrusted/n_trusted with both posteriors clipped;
/// the empirical prior ratio turns the posterior odds into a density ratio.
inline double source_odds_weight(double p_trusted, double p_untrusted, std::size_t n_trusted, std::size_t n_untrusted) {
    return clip_probability(p_trusted) / clip_probability(p_untrusted) * static_cast<double>(n_untrusted) /
           static_cast<double>(n_trusted);
}

/// Stacks trusted rows (s = 1) over untrusted rows (s = 0).
struct SourceLabeledSet {
    Matrix features;
    std::vector<int> source;

    SourceLabeledSet(const Matrix& trusted, const Matrix& untrusted) {
        if (trusted.rows() == 0 || untrusted.rows() == 0) throw ArgumentError("source-labeled set needs both sources");
        if (trusted.cols() != untrusted.cols()) throw ArgumentError("source-labeled set: column counts differ");
        features.resize(trusted.rows() + untrusted.rows(), trusted.cols());
        features.topRows(trusted.rows()) = trusted;
        features.bottomRows(untrusted.rows()) = untrusted;
        source.assign(static_cast<std::size_t>(trusted.rows()), 1);
        source.resize(static_cast<std::size_t>(features.rows()), 0);
    }
};

/// Density-ratio weights on untrusted rows from an already fitted source
/// classifier (column 1 = trusted).
inline WeightVector pdr_weights_from_model(const ProbabilisticModel& source_model, const Matrix& untrusted_x,
                                           std::size_t n_trusted, std::size_t n_untrusted) {
    const Matrix p = source_model.predict_proba(untrusted_x);
    std::vector<double> w(static_cast<std::size_t>(untrusted_x.rows()));
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        w[static_cast<std::size_t>(i)] = cap_weight(source_odds_weight(p(i, 1), p(i, 0), n_trusted, n_untrusted));
    }
    return WeightVector(std::move(w));
}

inline ModelPtr fit_source_classifier(const Matrix& trusted_x, const Matrix& untrusted_x, const LearnerFactory& learner) {
    SourceLabeledSet s(trusted_x, untrusted_x);
    return learner(TrainingView{s.features, s.source, 2});
}

/// Probabilistic density ratio P_T(x)/P_U(x) evaluated on the untrusted rows.
inline WeightVector pdr_ratio(const Matrix& trusted_x, const Matrix& untrusted_x, const LearnerFactory& learner) {
    const ModelPtr f_s = fit_source_classifier(trusted_x, untrusted_x, learner);
    return pdr_weights_from_model(*f_s, untrusted_x, static_cast<std::size_t>(trusted_x.rows()),
                                  static_cast<std::size_t>(untrusted_x.rows()));
}

inline WeightVector pdr_weights(const BiqualityDataset& biq, const LearnerFactory& learner) {
    return pdr_ratio(biq.trusted.features(), biq.untrusted.features(), learner);
}

struct KMMParams {
    /// RBF bandwidth; nullopt means 1 / n_features.
    std::optional<double> gamma;
    double upper_bound = 1000.0;
    /// Slab half-width on mean(beta); nullopt means (sqrt(m) - 1) / sqrt(m)
    /// with m the rows solved together.
    std::optional<double> epsilon;
    std::size_t batch_size = 100;
    int max_iters = 2000;
    double tolerance = 1e-6;
    int power_iters = 50;
    std::uint64_t seed = 0;

    void validate() const {
        if (gamma && !(*gamma > 0.0)) throw ArgumentError("KMMParams: gamma must be > 0");
        if (!(upper_bound > 0.0)) throw ArgumentError("KMMParams: B must be > 0");
        if (epsilon && !(*epsilon >= 0.0)) throw ArgumentError("KMMParams: epsilon must be >= 0");
        if (batch_size < 1) throw ArgumentError("KMMParams: batch_size must be >= 1");
        if (max_iters < 1) throw ArgumentError("KMMParams: max_iters must be >= 1");
    }
};

struct KMMBatchTrace {
    std::vector<double> objective; // QP objective after each accepted step, starting with the initial point
    int iterations = 0;
    bool converged = false;
    double lipschitz = 0.0;
};

struct KMMResult {
    WeightVector weights;
    bool converged = true;
    std::vector<KMMBatchTrace> batches;
    std::vector<std::string> flags;
};

/// Euclidean projection onto {0 <= b <= upper} intersected with
/// {lo <= sum(b) <= hi}; found by bisection on the shift tau in
/// clip(v - tau, 0, upper).
inline std::vector<double> project_box_slab(const std::vector<double>& v, double upper, double lo, double hi) {
    auto clipped_sum = [&](double tau) {
        double s = 0.0;
        for (double x : v) s += std::clamp(x - tau, 0.0, upper);
        return s;
    };
    auto apply = [&](double tau) {
        std::vector<double> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp(v[i] - tau, 0.0, upper);
        return out;
    };
    const double s0 = clipped_sum(0.0);
    if (s0 >= lo && s0 <= hi) return apply(0.0);
    const double target = s0 > hi ? hi : lo;
    const auto [vmin, vmax] = std::minmax_element(v.begin(), v.end());
    // sum is nonincreasing in tau: upper*n at tau <= vmin - upper, 0 at tau >= vmax
    double a = *vmin - upper;
    double b = *vmax;
    for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, std::abs(a) + std::abs(b)); ++it) {
        const double mid = a + (b - a) / 2.0;
        if (clipped_sum(mid) > target) {
            a = mid;
        } else {
            b = mid;
        }
    }
    // pick the endpoint whose sum lands inside the slab
    const double sa = clipped_sum(a);
    const double sb = clipped_sum(b);
    return std::abs(sa - target) <= std::abs(sb - target) ? apply(a) : apply(b);
}

/// 0.5 b'Kb - kappa'b
inline double kmm_qp_objective(const Matrix& gram, const Eigen::VectorXd& kappa, const Eigen::VectorXd& beta) {
    return 0.5 * beta.dot(gram * beta) - kappa.dot(beta);
}

namespace detail {

inline double largest_eigenvalue(const Matrix& gram, int iters) {
    const Eigen::Index m = gram.rows();
    Eigen::VectorXd v = Eigen::VectorXd::Ones(m) / std::sqrt(static_cast<double>(m));
    double lambda = 0.0;
    for (int i = 0; i < iters; ++i) {
        Eigen::VectorXd w = gram * v;
        const double norm = w.norm();
        if (norm <= 0.0) return 0.0;
        lambda = v.dot(w);
        v = w / norm;
    }
    return lambda;
}

inline KMMBatchTrace solve_kmm_batch(const Matrix& trusted_x, const Matrix& batch_x, double gamma,
                                     const KMMParams& params, std::vector<double>& beta_out) {
    const Eigen::Index m = batch_x.rows();
    const auto md = static_cast<double>(m);
    const Matrix gram = rbf_gram(batch_x, batch_x, gamma);
    const Matrix cross = rbf_gram(batch_x, trusted_x, gamma);
    const Eigen::VectorXd kappa = cross.rowwise().sum() * (md / static_cast<double>(trusted_x.rows()));
    const double eps = params.epsilon ? *params.epsilon : (std::sqrt(md) - 1.0) / std::sqrt(md);
    const double lo = md * std::max(0.0, 1.0 - eps);
    const double hi = md * (1.0 + eps);
    if (lo > md * params.upper_bound) throw ArgumentError("KMM: infeasible constraints (B < 1 - epsilon)");

    KMMBatchTrace trace;
    double lipschitz = detail::largest_eigenvalue(gram, params.power_iters);
    if (!(lipschitz > 0.0)) lipschitz = 1.0;

    auto to_vec = [](const std::vector<double>& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())); };
    std::vector<double> beta = project_box_slab(std::vector<double>(static_cast<std::size_t>(m), 1.0), params.upper_bound, lo, hi);
    double obj = kmm_qp_objective(gram, kappa, to_vec(beta));
    trace.objective.push_back(obj);
    std::vector<double> step(static_cast<std::size_t>(m));
    int iter = 0;
    while (iter < params.max_iters) {
        const Eigen::VectorXd grad = gram * to_vec(beta) - kappa;
        for (Eigen::Index i = 0; i < m; ++i) step[static_cast<std::size_t>(i)] = beta[static_cast<std::size_t>(i)] - grad(i) / lipschitz;
        std::vector<double> next = project_box_slab(step, params.upper_bound, lo, hi);
        const double next_obj = kmm_qp_objective(gram, kappa, to_vec(next));
        ++iter;
        if (next_obj > obj + 1e-12 * std::max(1.0, std::abs(obj))) {
            // the power-iteration estimate undershot the true Lipschitz constant
            lipschitz *= 2.0;
            continue;
        }
        const double change = obj - next_obj;
        beta = std::move(next);
        obj = next_obj;
        trace.objective.push_back(obj);
        if (change < params.tolerance) {
            trace.converged = true;
            break;
        }
    }
    trace.iterations = iter;
    trace.lipschitz = lipschitz;
    beta_out = std::move(beta);
    return trace;
}

} // namespace detail

/// Kernel mean matching weights for the untrusted rows. When there are more
/// untrusted rows than batch_size, rows are shuffled, solved in batches
/// against the full trusted set, and the batch solutions are scattered back
/// to the original row order.
inline KMMResult kmm_weights(const Matrix& trusted_x, const Matrix& untrusted_x, const KMMParams& params = {}) {
    params.validate();
    if (trusted_x.rows() == 0 || untrusted_x.rows() == 0) throw ArgumentError("kmm_weights: empty input");
    if (trusted_x.cols() != untrusted_x.cols()) throw ArgumentError("kmm_weights: column counts differ");
    const double gamma = params.gamma ? *params.gamma : default_rbf_gamma(trusted_x.cols());
    const auto n = static_cast<std::size_t>(untrusted_x.rows());

    std::vector<std::vector<std::size_t>> batches;
    if (n <= params.batch_size) {
        batches.push_back(iota_indices(n));
    } else {
        auto order = iota_indices(n);
        Rng rng(params.seed);
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += params.batch_size) {
            const auto stop = std::min(n, start + params.batch_size);
            batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(stop));
        }
    }

    KMMResult result;
    std::vector<double> weights(n, 0.0);
    for (const auto& rows : batches) {
        std::vector<double> beta;
        const Matrix batch_x = take_rows(untrusted_x, rows);
        auto trace = detail::solve_kmm_batch(trusted_x, batch_x, gamma, params, beta);
        if (!trace.converged) result.converged = false;
        for (std::size_t i = 0; i < rows.size(); ++i) weights[rows[i]] = beta[i];
        result.batches.push_back(std::move(trace));
    }
    if (!result.converged) result.flags.push_back("kmm_not_converged");
    result.weights = WeightVector(std::move(weights));
    return result;
}

/// Density ratio estimator used per class by K-DR: given trusted and
/// untrusted feature matrices, returns ratio estimates on the untrusted rows.
using RatioEstimator = std::function<WeightVector(const Matrix& trusted_x, const Matrix& untrusted_x)>;

inline RatioEstimator make_pdr_estimator(LearnerFactory learner) {
    return [learner = std::move(learner)](const Matrix& t, const Matrix& u) { return pdr_ratio(t, u, learner); };
}

inline RatioEstimator make_kmm_estimator(KMMParams params = {}) {
    return [params](const Matrix& t, const Matrix& u) { return kmm_weights(t, u, params).weights; };
}

} // namespace biq
