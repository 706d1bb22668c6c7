#pragma once

#include <cmath>
#include <cstdint>

namespace ewt {

// SplitMix64 (Steele, Lea, Flood 2014). Chosen as the project RNG because
// the whole algorithm fits in a dozen lines and can be re-implemented
// bit-exactly in any language, so noise corpora and init are reproducible.
// Run manifests record the algorithm id together with the seed.
class SplitMix64 {
public:
    static constexpr const char* kAlgorithmId = "splitmix64";

    explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Child stream derived by hashing; parent and child sequences are
    // independent for practical purposes.
    SplitMix64 split() { return SplitMix64(next_u64() ^ 0x6a09e667f3bcc909ULL); }

    // Uniform in [0,1) with 53-bit resolution.
    double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Marsaglia polar would branch on rejection; Box-Muller keeps the draw
    // count per sample fixed, which makes streams easier to reason about.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double(), u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Knuth's product method; fine for the small means used here.
    std::uint64_t poisson(double mean) {
        if (mean <= 0.0) return 0;
        if (mean < 60.0) {
            double limit = std::exp(-mean), prod = next_double();
            std::uint64_t k = 0;
            while (prod > limit) {
                ++k;
                prod *= next_double();
            }
            return k;
        }
        // Normal approximation for large means, clamped at zero.
        double v = mean + std::sqrt(mean) * gaussian();
        return v <= 0.0 ? 0 : std::uint64_t(v + 0.5);
    }

    std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ewt
