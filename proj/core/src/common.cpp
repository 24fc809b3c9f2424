#include "csir/common.hpp"

#include <mutex>
#include <numeric>
#include <thread>

namespace csir {

std::vector<long long> multinomial_draw(std::mt19937_64& rng, long long total,
                                        std::span<const double> pi) {
    if (total < 0) throw ValidationError("multinomial_draw: negative total");
    const std::size_t n = pi.size();
    if (n == 0) throw ValidationError("multinomial_draw: empty probability vector");
    double psum = 0.0;
    for (double p : pi) {
        if (!(p >= 0.0)) throw NumericError("multinomial_draw: negative or NaN probability");
        psum += p;
    }
    std::vector<long long> counts(n, 0);
    if (total == 0) return counts;
    if (psum <= 0.0) throw NumericError("multinomial_draw: probabilities sum to zero");

    long long remaining = total;
    double prob_left = psum;
    for (std::size_t j = 0; j + 1 < n && remaining > 0; ++j) {
        const double p = std::clamp(pi[j] / prob_left, 0.0, 1.0);
        long long c = 0;
        if (p >= 1.0) {
            c = remaining;
        } else if (p > 0.0) {
            std::binomial_distribution<long long> bin(remaining, p);
            c = bin(rng);
        }
        counts[j] = c;
        remaining -= c;
        prob_left -= pi[j];
    }
    counts[n - 1] += remaining;
    return counts;
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman_rho(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw ValidationError("spearman_rho: need two equal-length series");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double mx = mean(rx), my = mean(ry);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        const double dx = rx[i] - mx, dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

double effective_sample_size(std::span<const double> chain) {
    const std::size_t n = chain.size();
    if (n < 4) return static_cast<double>(n);
    const double m = mean(chain);
    double var = 0.0;
    for (double v : chain) var += (v - m) * (v - m);
    var /= static_cast<double>(n);
    if (var <= 0.0) return static_cast<double>(n);

    double acf_sum = 0.0;
    for (std::size_t lag = 1; lag < n / 2; ++lag) {
        double c = 0.0;
        for (std::size_t i = 0; i + lag < n; ++i) c += (chain[i] - m) * (chain[i + lag] - m);
        c /= static_cast<double>(n) * var;
        if (c <= 0.0) break;
        acf_sum += c;
    }
    return static_cast<double>(n) / (1.0 + 2.0 * acf_sum);
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    const unsigned nw = std::max(1u, std::min({threads == 0 ? hw : threads, hw,
                                               static_cast<unsigned>(n)}));
    if (nw == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(nw);
    std::exception_ptr first_error;
    std::mutex err_mutex;
    for (unsigned w = 0; w < nw; ++w) {
        workers.emplace_back([&, w]() {
            try {
                for (std::size_t i = w; i < n; i += nw) fn(i);
            } catch (...) {
                std::scoped_lock lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : workers) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace csir
