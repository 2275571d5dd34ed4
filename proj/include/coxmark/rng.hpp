#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace coxmark {

// Deterministic RNG wrapper. The mt19937_64 engine is bit-reproducible by the
// standard; the distributions are hand-rolled here because the std ones are
// implementation-defined and would break cross-platform determinism.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t raw() { return engine_(); }

    // Uniform on (0, 1]; never returns 0 so logs are safe.
    double uniform_pos() { return static_cast<double>((engine_() >> 11) + 1) * 0x1p-53; }

    // Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be >= 1.
    std::size_t uniform_index(std::size_t n) {
        std::size_t k = static_cast<std::size_t>(uniform() * static_cast<double>(n));
        return k >= n ? n - 1 : k;
    }

    // Box-Muller; one fresh pair of uniforms per call.
    double normal() {
        double u1 = uniform_pos();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    double exponential() { return -std::log(uniform_pos()); }

    // Poisson via inversion for small means, exponential arrival sums above.
    long poisson(double mean) {
        if (mean <= 0.0) return 0;
        if (mean < 30.0) {
            double p = std::exp(-mean);
            double cdf = p;
            double u = uniform();
            long k = 0;
            while (u > cdf && k < 10000) {
                ++k;
                p *= mean / static_cast<double>(k);
                cdf += p;
            }
            return k;
        }
        double acc = exponential();
        long k = 0;
        while (acc <= mean) {
            ++k;
            acc += exponential();
        }
        return k;
    }

    // Index draw proportional to nonnegative weights (binary search on csum).
    std::size_t categorical(const std::vector<double>& cumulative_weights) {
        double total = cumulative_weights.back();
        double u = uniform() * total;
        std::size_t lo = 0, hi = cumulative_weights.size() - 1;
        while (lo < hi) {
            std::size_t mid = (lo + hi) / 2;
            if (cumulative_weights[mid] <= u)
                lo = mid + 1;
            else
                hi = mid;
        }
        return lo;
    }

private:
    std::mt19937_64 engine_;
};

// splitmix64; used to derive independent child seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic seed for a named pipeline stage under one master seed.
inline std::uint64_t derive_seed(std::uint64_t master, const std::string& tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return mix_seed(master ^ h);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return mix_seed(master ^ mix_seed(stream + 0x51ed2701ULL));
}

} // namespace coxmark
