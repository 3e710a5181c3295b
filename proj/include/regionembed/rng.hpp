#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "regionembed/common.hpp"

namespace regionembed {

// Deterministic random source. All distributions are implemented on top of
// raw mt19937_64 draws so that a given seed yields the same stream on every
// platform and standard library (std::*_distribution is
// implementation-defined and would break byte-identical reruns).
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed), seed_(seed) {}

    // Substream derived from this stream's seed and a name. Lets components
    // (kg, init, kmeans, folds, synth) be re-seeded independently of each
    // other and of draw order.
    Rng substream(const std::string& name) const {
        uint64_t h = fnv1a64(name);
        h ^= seed_ + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        return Rng(h);
    }

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        // Rejection sampling to avoid modulo bias.
        const uint64_t bound = ~0ull - ~0ull % static_cast<uint64_t>(n);
        uint64_t x;
        do {
            x = gen_();
        } while (x >= bound);
        return static_cast<int>(x % static_cast<uint64_t>(n));
    }

    // Standard normal via Box-Muller (no cached spare, keeps the stream
    // position a pure function of the number of calls).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (int i = static_cast<int>(xs.size()) - 1; i > 0; --i) {
            std::swap(xs[static_cast<size_t>(i)], xs[static_cast<size_t>(uniform_int(i + 1))]);
        }
    }

private:
    std::mt19937_64 gen_;
    uint64_t seed_;
};

}  // namespace regionembed
