#pragma once

// Weighted isotonic regression by pool-adjacent-violators.

#include "biquality/core.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace biq {

/// Nondecreasing step function. Between breakpoints the value of the
/// nearest breakpoint at or below x is used; outside the fitted range the
/// boundary values are returned.
class IsotonicMap {
public:
    IsotonicMap() = default;
    IsotonicMap(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {}

    static IsotonicMap identity() { return IsotonicMap({0.0, 1.0}, {0.0, 1.0}, true); }

    double operator()(double v) const {
        if (identity_) return v;
        if (x_.empty()) return v;
        if (v <= x_.front()) return y_.front();
        const auto it = std::upper_bound(x_.begin(), x_.end(), v);
        return y_[static_cast<std::size_t>(it - x_.begin()) - 1];
    }

    bool is_identity() const { return identity_; }
    const std::vector<double>& breakpoints() const { return x_; }
    const std::vector<double>& values() const { return y_; }

private:
    IsotonicMap(std::vector<double> x, std::vector<double> y, bool identity)
        : x_(std::move(x)), y_(std::move(y)), identity_(identity) {}

    std::vector<double> x_;
    std::vector<double> y_;
    bool identity_ = false;
};

/// Weighted least-squares nondecreasing fit of y against x. Rows with zero
/// weight are ignored; rows sharing an x value are pooled first.
inline IsotonicMap fit_isotonic(std::span<const double> x, std::span<const double> y, std::span<const double> w) {
    if (x.empty()) throw ArgumentError("fit_isotonic: empty input");
    if (x.size() != y.size() || x.size() != w.size()) throw ArgumentError("fit_isotonic: lengths differ");
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(w[i] >= 0.0)) throw ArgumentError("fit_isotonic: negative weight");
        if (w[i] > 0.0) order.push_back(i);
    }
    if (order.empty()) throw ArgumentError("fit_isotonic: no positive weight");
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });

    struct Block {
        double x_first;
        double sum_wy;
        double sum_w;
        std::size_t n_unique; // distinct x values inside the block
        double mean() const { return sum_wy / sum_w; }
    };
    // aggregate tied x values before pooling
    std::vector<double> unique_x;
    std::vector<Block> groups;
    for (auto i : order) {
        if (!unique_x.empty() && x[i] == unique_x.back()) {
            groups.back().sum_wy += w[i] * y[i];
            groups.back().sum_w += w[i];
        } else {
            unique_x.push_back(x[i]);
            groups.push_back({x[i], w[i] * y[i], w[i], 1});
        }
    }
    std::vector<Block> blocks;
    for (const auto& g : groups) {
        blocks.push_back(g);
        while (blocks.size() > 1 && blocks[blocks.size() - 2].mean() >= blocks.back().mean()) {
            Block last = blocks.back();
            blocks.pop_back();
            blocks.back().sum_wy += last.sum_wy;
            blocks.back().sum_w += last.sum_w;
            blocks.back().n_unique += last.n_unique;
        }
    }
    std::vector<double> values;
    values.reserve(unique_x.size());
    for (const auto& b : blocks) values.insert(values.end(), b.n_unique, b.mean());
    return IsotonicMap(std::move(unique_x), std::move(values));
}

/// Unit-weight convenience overload.
inline IsotonicMap fit_isotonic(std::span<const double> x, std::span<const double> y) {
    std::vector<double> w(x.size(), 1.0);
    return fit_isotonic(x, y, w);
}

} // namespace biq
