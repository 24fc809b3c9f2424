#pragma once

// Shared plumbing: error taxonomy, seed derivation, small statistics helpers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csir {

/// Bad input data or violated precondition. CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure inside an algorithm (non-PD matrix, overflow, NaN
/// target). CLI maps this to exit code 1.
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed configuration or command usage. CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Seeding
//
// All stochastic components draw from std::mt19937_64 engines seeded through
// derive_seed(master, stream). Replicates, chains, and predictive draws get
// disjoint streams, so results do not depend on scheduling or thread count.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derive an independent child seed from a master seed and a stream index.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return splitmix64(splitmix64(master) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64{seed}; }

// ---------------------------------------------------------------------------
// Small numeric helpers
// ---------------------------------------------------------------------------

inline double expit(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// log(sum_i exp(x_i)) with max-shift stabilization. Empty input -> -inf.
inline double log_sum_exp(std::span<const double> x) {
    if (x.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(x.begin(), x.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

inline double mean(std::span<const double> x) {
    if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

/// Sample standard deviation (n-1 denominator).
inline double sample_sd(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(n - 1));
}

/// Empirical quantile as a pure order statistic (no interpolation), so that
/// quantile(f(x)) == f(quantile(x)) holds exactly for monotone f.
inline double quantile_order_stat(std::vector<double> x, double q) {
    if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t n = x.size();
    const auto k = static_cast<std::size_t>(std::clamp<double>(
        std::ceil(q * static_cast<double>(n)), 1.0, static_cast<double>(n)));
    std::nth_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(k - 1), x.end());
    return x[k - 1];
}

/// Multinomial(total, pi) via sequential conditional binomials. The returned
/// counts sum to `total` exactly; `pi` must be nonnegative with positive sum.
std::vector<long long> multinomial_draw(std::mt19937_64& rng, long long total,
                                        std::span<const double> pi);

/// Spearman rank correlation with average-rank tie handling.
double spearman_rho(std::span<const double> x, std::span<const double> y);

/// Effective sample size from the autocorrelation sequence, truncated at the
/// first nonpositive estimate. Crude but adequate as a mixing diagnostic.
double effective_sample_size(std::span<const double> chain);

/// Run fn(i) for i in [0, n) across up to `threads` workers. Results must be
/// written to per-index slots; the partition is deterministic.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace csir
