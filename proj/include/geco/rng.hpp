#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace geco {

/// Deterministic RNG. Wraps mt19937_64 but implements the distributions by
/// hand: std::uniform_real_distribution and friends are not guaranteed to
/// produce identical streams across standard libraries, and dataset
/// generation must be byte-reproducible.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    /// Derives an independent stream, e.g. one per scene or per epoch.
    static Rng derived(uint64_t seed, uint64_t stream) {
        return Rng(splitmix(seed ^ splitmix(stream + 0x9E3779B97F4A7C15ull)));
    }

    uint64_t bits() { return gen_(); }

    /// Uniform in [0, 1).
    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        uint64_t span = uint64_t(hi - lo) + 1;
        return lo + int(gen_() % span);
    }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    static uint64_t splitmix(uint64_t x) {
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace geco
