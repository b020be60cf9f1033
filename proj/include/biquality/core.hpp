#pragma once

// Shared primitives: matrix alias, error types, and a small portable RNG
// toolkit. Everything randomized in the library draws from Rng so that a
// seed fully determines the output on every platform.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace biq {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Labels = std::vector<int>;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ArgumentError : Error {
    using Error::Error;
};
struct SchemaError : Error {
    using Error::Error;
};
struct ParseError : Error {
    ParseError(const std::string& what, std::size_t row) : Error(what), row(row) {}
    std::size_t row;
};
struct DegenerateDatasetError : Error {
    using Error::Error;
};
struct StratificationError : Error {
    using Error::Error;
};

// splitmix64 finalizer; also used to derive child seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Combine an arbitrary number of seed components into one seed.
template <class... Parts>
std::uint64_t derive_seed(std::uint64_t base, const Parts&... parts) {
    std::uint64_t h = mix64(base);
    auto absorb = [&h](const auto& part) {
        using T = std::decay_t<decltype(part)>;
        if constexpr (std::is_convertible_v<T, std::string_view>) {
            h = mix64(h ^ fnv1a(std::string_view(part)));
        } else if constexpr (std::is_floating_point_v<T>) {
            // hash the decimal rendering so 0.1 from a config equals 0.1 in code
            h = mix64(h ^ fnv1a(std::to_string(static_cast<double>(part))));
        } else {
            h = mix64(h ^ static_cast<std::uint64_t>(part));
        }
    };
    (absorb(parts), ...);
    return h;
}

/// xoshiro256** with splitmix seeding. Distribution helpers are hand-rolled
/// because the standard distributions are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) {
        std::uint64_t x = seed;
        for (auto& s : state_) {
            x += 0x9e3779b97f4a7c15ULL;
            s = mix64(x);
        }
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Lemire's unbiased multiply-shift.
    std::size_t below(std::size_t n) {
        if (n == 0) throw ArgumentError("Rng::below: empty range");
        const auto bound = static_cast<std::uint64_t>(n);
        std::uint64_t x = next();
        __uint128_t m = static_cast<__uint128_t>(x) * bound;
        auto low = static_cast<std::uint64_t>(m);
        if (low < bound) {
            const std::uint64_t threshold = -bound % bound;
            while (low < threshold) {
                x = next();
                m = static_cast<__uint128_t>(x) * bound;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::size_t>(m >> 64);
    }

    /// Standard normal via Box-Muller (one value per call, no caching).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t state_[4]{};
};

inline std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

inline Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    }
    return out;
}

} // namespace biq
