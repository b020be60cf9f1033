#pragma once

// Tabular datasets: ingestion from numeric CSV, stratified splitting, and
// the two-moons / Gaussian-blob toy generators.

#include "biquality/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace biq {

/// Labeled tabular data. Labels are contiguous ids in [0, K); label_names
/// keeps the original text of each id (first-appearance order on ingestion).
/// Immutable after construction.
class Dataset {
public:
    Dataset() = default;

    Dataset(Matrix features, Labels labels, int n_classes,
            std::vector<std::string> feature_names = {},
            std::vector<std::string> label_names = {})
        : features_(std::move(features)),
          labels_(std::move(labels)),
          feature_names_(std::move(feature_names)),
          label_names_(std::move(label_names)),
          n_classes_(n_classes) {
        if (n_classes_ < 2) throw DegenerateDatasetError("dataset needs at least two classes");
        if (static_cast<std::size_t>(features_.rows()) != labels_.size()) {
            throw SchemaError("feature rows (" + std::to_string(features_.rows()) +
                              ") != label count (" + std::to_string(labels_.size()) + ")");
        }
        for (int y : labels_) {
            if (y < 0 || y >= n_classes_) throw SchemaError("label out of range [0, K)");
        }
        if (!features_.allFinite()) throw ParseError("non-finite feature value", 0);
        if (feature_names_.empty()) {
            for (Eigen::Index j = 0; j < features_.cols(); ++j) feature_names_.push_back("x" + std::to_string(j));
        }
        if (static_cast<Eigen::Index>(feature_names_.size()) != features_.cols()) {
            throw SchemaError("feature_names size does not match feature columns");
        }
        if (label_names_.empty()) {
            for (int k = 0; k < n_classes_; ++k) label_names_.push_back(std::to_string(k));
        }
        if (static_cast<int>(label_names_.size()) != n_classes_) {
            throw SchemaError("label_names size does not match n_classes");
        }
    }

    const Matrix& features() const { return features_; }
    const Labels& labels() const { return labels_; }
    const std::vector<std::string>& feature_names() const { return feature_names_; }
    const std::vector<std::string>& label_names() const { return label_names_; }
    int n_classes() const { return n_classes_; }
    std::size_t size() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }
    Eigen::Index n_features() const { return features_.cols(); }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes_), 0);
        for (int y : labels_) ++counts[static_cast<std::size_t>(y)];
        return counts;
    }

    /// Rows in the given order; keeps schema and label mapping.
    Dataset subset(const std::vector<std::size_t>& rows) const {
        Labels y;
        y.reserve(rows.size());
        for (auto r : rows) y.push_back(labels_[r]);
        return Dataset(take_rows(features_, rows), std::move(y), n_classes_, feature_names_, label_names_);
    }

    Dataset with_labels(Labels labels) const {
        return Dataset(features_, std::move(labels), n_classes_, feature_names_, label_names_);
    }

    bool same_schema(const Dataset& other) const {
        return n_classes_ == other.n_classes_ && feature_names_ == other.feature_names_;
    }

    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.n_classes_ == b.n_classes_ && a.labels_ == b.labels_ &&
               a.feature_names_ == b.feature_names_ && a.label_names_ == b.label_names_ &&
               a.features_.rows() == b.features_.rows() && a.features_.cols() == b.features_.cols() &&
               a.features_ == b.features_;
    }

private:
    Matrix features_;
    Labels labels_;
    std::vector<std::string> feature_names_;
    std::vector<std::string> label_names_;
    int n_classes_ = 0;
};

/// Trusted and untrusted partitions sharing one schema.
struct BiqualityDataset {
    Dataset trusted;
    Dataset untrusted;

    BiqualityDataset(Dataset t, Dataset u) : trusted(std::move(t)), untrusted(std::move(u)) {
        if (trusted.empty() || untrusted.empty()) throw ArgumentError("biquality partitions must be non-empty");
        if (!trusted.same_schema(untrusted)) throw SchemaError("trusted and untrusted schemas differ");
    }

    int n_classes() const { return trusted.n_classes(); }

    /// Trusted rows first, then untrusted rows.
    Dataset pooled() const {
        Matrix x(static_cast<Eigen::Index>(trusted.size() + untrusted.size()), trusted.n_features());
        x.topRows(static_cast<Eigen::Index>(trusted.size())) = trusted.features();
        x.bottomRows(static_cast<Eigen::Index>(untrusted.size())) = untrusted.features();
        Labels y = trusted.labels();
        y.insert(y.end(), untrusted.labels().begin(), untrusted.labels().end());
        return Dataset(std::move(x), std::move(y), n_classes(), trusted.feature_names(), trusted.label_names());
    }
};

struct SplitSpec {
    double test_fraction = 0.2;
    double trusted_fraction = 0.05;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    cells.push_back(std::move(cur));
    return cells;
}

inline std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

} // namespace detail

/// Shortest round-trippable decimal rendering.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

/// Reads a numeric CSV with a header row. Every column except label_column
/// must parse as a finite number; labels are encoded by first appearance.
inline Dataset read_csv(std::istream& in, const std::string& label_column) {
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("empty CSV: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3); // UTF-8 BOM
    std::vector<std::string> header = detail::split_csv_line(line);
    for (auto& h : header) h = detail::trim(h);

    const auto label_it = std::find(header.begin(), header.end(), label_column);
    if (label_it == header.end()) throw SchemaError("label column '" + label_column + "' not found in header");
    const auto label_pos = static_cast<std::size_t>(label_it - header.begin());

    std::vector<std::string> feature_names;
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (j != label_pos) feature_names.push_back(header[j]);
    }

    std::vector<double> values;
    Labels labels;
    std::vector<std::string> label_names;
    std::map<std::string, int> label_ids;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        ++row;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) {
            throw ParseError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                                 " cells, got " + std::to_string(cells.size()),
                             row);
        }
        for (std::size_t j = 0; j < cells.size(); ++j) {
            std::string cell = detail::trim(cells[j]);
            if (j == label_pos) {
                auto [it, inserted] = label_ids.emplace(cell, static_cast<int>(label_names.size()));
                if (inserted) label_names.push_back(cell);
                labels.push_back(it->second);
                continue;
            }
            double v = 0.0;
            const char* first = cell.data();
            const char* last = cell.data() + cell.size();
            if (first != last && *first == '+') ++first;
            auto [ptr, ec] = std::from_chars(first, last, v);
            if (cell.empty() || ec != std::errc{} || ptr != last || !std::isfinite(v)) {
                throw ParseError("row " + std::to_string(row) + ", column '" + header[j] +
                                     "': not a finite number: '" + cell + "'",
                                 row);
            }
            values.push_back(v);
        }
    }
    if (labels.empty()) throw DegenerateDatasetError("CSV has no data rows");
    if (label_names.size() < 2) {
        throw DegenerateDatasetError("label column '" + label_column + "' has a single distinct value");
    }
    const auto n = static_cast<Eigen::Index>(labels.size());
    const auto d = static_cast<Eigen::Index>(feature_names.size());
    Matrix x = Eigen::Map<const Matrix>(values.data(), n, d);
    const int k = static_cast<int>(label_names.size());
    return Dataset(std::move(x), std::move(labels), k, std::move(feature_names), std::move(label_names));
}

inline Dataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open " + path.string());
    return read_csv(in, label_column);
}

inline void write_csv(std::ostream& out, const Dataset& d, const std::string& label_column = "label") {
    for (const auto& name : d.feature_names()) out << detail::csv_escape(name) << ',';
    out << detail::csv_escape(label_column) << '\n';
    const Matrix& x = d.features();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) out << format_double(x(i, j)) << ',';
        out << detail::csv_escape(d.label_names()[static_cast<std::size_t>(d.labels()[static_cast<std::size_t>(i)])])
            << '\n';
    }
}

inline void save_csv(const std::filesystem::path& path, const Dataset& d, const std::string& label_column = "label") {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    write_csv(out, d, label_column);
}

/// Sidecar metadata: label mapping, K, n, feature names.
inline nlohmann::json dataset_metadata(const Dataset& d, const std::string& label_column = "label") {
    nlohmann::json meta;
    meta["n_samples"] = d.size();
    meta["n_features"] = d.n_features();
    meta["n_classes"] = d.n_classes();
    meta["label_column"] = label_column;
    meta["label_encoding"] = "first_appearance";
    meta["label_names"] = d.label_names();
    meta["feature_names"] = d.feature_names();
    meta["class_counts"] = d.class_counts();
    return meta;
}

/// Per-class allocation for a stratified split: round(fraction * count) per
/// class, adjusted by largest remainder so the total is round(fraction * n),
/// and clamped so every class with two or more rows lands in both parts.
inline std::vector<std::size_t> stratified_allocation(const std::vector<std::size_t>& counts, double fraction) {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    std::vector<std::size_t> take(counts.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        const double exact = fraction * static_cast<double>(counts[k]);
        take[k] = static_cast<std::size_t>(std::floor(exact));
        assigned += take[k];
        remainders.emplace_back(exact - std::floor(exact), k);
    }
    const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < target && i < remainders.size(); ++i) {
        const auto k = remainders[i].second;
        if (take[k] < counts[k]) {
            ++take[k];
            ++assigned;
        }
    }
    for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts[k] >= 2) take[k] = std::clamp<std::size_t>(take[k], 1, counts[k] - 1);
    }
    return take;
}

/// Index-level stratified split: returns (first, second) row indices,
/// each sorted ascending.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
stratified_split_indices(const Labels& labels, int n_classes, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ArgumentError("split fraction must be in (0, 1)");
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    std::vector<std::size_t> counts;
    for (std::size_t k = 0; k < by_class.size(); ++k) {
        const auto c = by_class[k].size();
        if (c == 1) {
            throw StratificationError("class " + std::to_string(k) + " has a single sample; cannot stratify");
        }
        counts.push_back(c);
    }
    const auto take = stratified_allocation(counts, fraction);
    Rng rng(seed);
    std::vector<std::size_t> first;
    std::vector<std::size_t> second;
    for (std::size_t k = 0; k < by_class.size(); ++k) {
        auto rows = by_class[k];
        rng.shuffle(rows);
        first.insert(first.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take[k]));
        second.insert(second.end(), rows.begin() + static_cast<std::ptrdiff_t>(take[k]), rows.end());
    }
    std::sort(first.begin(), first.end());
    std::sort(second.begin(), second.end());
    return {std::move(first), std::move(second)};
}

/// Stratified split: the first part holds about `fraction` of every class.
/// Row order inside each part follows the original order.
inline std::pair<Dataset, Dataset> stratified_split(const Dataset& d, double fraction, std::uint64_t seed) {
    auto [a, b] = stratified_split_indices(d.labels(), d.n_classes(), fraction, seed);
    return {d.subset(a), d.subset(b)};
}

/// Random permutation of the rows.
inline Dataset shuffle_rows(const Dataset& d, std::uint64_t seed) {
    auto idx = iota_indices(d.size());
    Rng rng(seed);
    rng.shuffle(idx);
    return d.subset(idx);
}

/// Two interleaved half circles. Class 0 is the upper unit arc centered at
/// the origin; class 1 is the lower arc centered at (1, 0.5). Rows shuffled.
inline Dataset make_two_moons(std::size_t n, double noise_sd, std::uint64_t seed) {
    if (n < 2) throw ArgumentError("make_two_moons: n must be >= 2");
    if (!(noise_sd >= 0.0)) throw ArgumentError("make_two_moons: noise_sd must be >= 0");
    const std::size_t n_outer = n / 2;
    const std::size_t n_inner = n - n_outer;
    auto angle = [](std::size_t i, std::size_t m) {
        return m <= 1 ? 0.0 : std::numbers::pi * static_cast<double>(i) / static_cast<double>(m - 1);
    };
    Matrix x(static_cast<Eigen::Index>(n), 2);
    Labels y(n);
    for (std::size_t i = 0; i < n_outer; ++i) {
        const double t = angle(i, n_outer);
        x(static_cast<Eigen::Index>(i), 0) = std::cos(t);
        x(static_cast<Eigen::Index>(i), 1) = std::sin(t);
        y[i] = 0;
    }
    for (std::size_t i = 0; i < n_inner; ++i) {
        const double t = angle(i, n_inner);
        const auto r = static_cast<Eigen::Index>(n_outer + i);
        x(r, 0) = 1.0 - std::cos(t);
        x(r, 1) = 0.5 - std::sin(t);
        y[n_outer + i] = 1;
    }
    Rng rng(seed);
    if (noise_sd > 0.0) {
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            x(i, 0) += noise_sd * rng.normal();
            x(i, 1) += noise_sd * rng.normal();
        }
    }
    auto order = iota_indices(n);
    rng.shuffle(order);
    Dataset d(std::move(x), std::move(y), 2, {"x0", "x1"}, {"0", "1"});
    return d.subset(order);
}

/// Isotropic Gaussian blobs, one per center, `per_blob[c]` rows each;
/// blob c gets label `blob_labels[c]`.
inline Dataset make_blobs(const std::vector<std::vector<double>>& centers, const std::vector<std::size_t>& per_blob,
                          const std::vector<int>& blob_labels, double sd, std::uint64_t seed) {
    if (centers.empty() || centers.size() != per_blob.size() || centers.size() != blob_labels.size()) {
        throw ArgumentError("make_blobs: centers, sizes and labels must align");
    }
    const auto d = static_cast<Eigen::Index>(centers.front().size());
    std::size_t n = 0;
    for (auto c : per_blob) n += c;
    Matrix x(static_cast<Eigen::Index>(n), d);
    Labels y;
    y.reserve(n);
    Rng rng(seed);
    Eigen::Index row = 0;
    int k = 0;
    for (std::size_t c = 0; c < centers.size(); ++c) {
        for (std::size_t i = 0; i < per_blob[c]; ++i, ++row) {
            for (Eigen::Index j = 0; j < d; ++j) x(row, j) = centers[c][static_cast<std::size_t>(j)] + sd * rng.normal();
            y.push_back(blob_labels[c]);
        }
        k = std::max(k, blob_labels[c] + 1);
    }
    return Dataset(std::move(x), std::move(y), std::max(k, 2));
}

} // namespace biq
