#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace tofd {

/// Deterministic random stream used everywhere in the project.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. Distributions are implemented here rather than taken from
/// <random>, because the standard distributions are implementation-defined
/// and would make seeded runs differ between standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    /// Independent stream derived from (seed, name). Used so parameter
    /// initialization does not depend on the order layers are created in.
    static Rng derived(std::uint64_t seed, std::string_view name) {
        return Rng(mix(seed ^ fnv1a(name)));
    }
    Rng derived(std::string_view name) const { return derived(seed_, name); }
    Rng derived(std::uint64_t stream) const { return Rng(mix(seed_ + 0x9e3779b97f4a7c15ULL * (stream + 1))); }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer on [0, n). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r;
        do { r = engine_(); } while (r >= limit);
        return r % n;
    }

    /// Standard normal via Box-Muller (one value per call; the pair's twin is cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do { u1 = uniform(); } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    // splitmix64 finalizer
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace tofd
