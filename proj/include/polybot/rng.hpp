#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace polybot {

// splitmix64 finalizer, used to derive independent sub-stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Deterministic RNG wrapper. std::mt19937_64 output is pinned by the
/// standard, and the distribution transforms below are written out by hand,
/// so sequences are bit-identical across platforms and library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    std::uint64_t next() { return gen_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(gen_() % span);
    }

    /// Box-Muller; second value of each pair is cached.
    double normal(double mu = 0.0, double sd = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mu + sd * spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return mu + sd * r * std::cos(a);
    }

    /// Independent child stream identified by a tag; stable w.r.t. calls
    /// already made on this stream.
    Rng sub(std::uint64_t tag) const { return Rng(mix64(seed_ ^ mix64(tag))); }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace polybot
