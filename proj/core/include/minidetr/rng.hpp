#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace minidetr {

// Seeded RNG used everywhere randomness is needed. Draw helpers avoid the
// implementation-defined std distributions so that a given (seed, call
// sequence) produces the same stream on every standard library.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n > 0. Rejection-free modulo is fine here:
    // n is always tiny compared to 2^64, the bias is unobservable.
    uint64_t uniform_index(uint64_t n) { return engine_() % n; }

    // Standard normal via Box-Muller (fresh pair each call keeps state simple).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Poisson draw, Knuth for small lambda, normal approximation above 64.
    uint64_t poisson(double lambda) {
        if (lambda <= 0.0) return 0;
        if (lambda > 64.0) {
            double v = lambda + std::sqrt(lambda) * normal();
            return v <= 0.0 ? 0 : static_cast<uint64_t>(v + 0.5);
        }
        double limit = std::exp(-lambda);
        double prod = uniform();
        uint64_t k = 0;
        while (prod > limit) {
            ++k;
            prod *= uniform();
        }
        return k;
    }

    // Fisher-Yates permutation of [0, n).
    std::vector<size_t> permutation(size_t n) {
        std::vector<size_t> p(n);
        std::iota(p.begin(), p.end(), size_t{0});
        for (size_t i = n; i > 1; --i) {
            std::swap(p[i - 1], p[uniform_index(i)]);
        }
        return p;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace minidetr
