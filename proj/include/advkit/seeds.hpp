#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace advkit {

/// Child-seed derivation used everywhere a master seed spawns per-role seeds:
/// FNV-1a over the role string folded into the master seed, then a splitmix64
/// finisher. Stable across platforms and standard libraries.
inline uint64_t derive_seed(uint64_t master, std::string_view role) {
    uint64_t h = 14695981039346656037ull ^ master;
    for (unsigned char c : role) {
        h ^= c;
        h *= 1099511628211ull;
    }
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

/// Deterministic RNG wrapper. Implements its own uniform/normal/index draws
/// so streams do not depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next() { return gen_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller. One fresh pair per two calls.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    /// Unbiased index in [0, n).
    size_t index(size_t n) {
        if (n <= 1) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = gen_();
        while (v >= limit) v = gen_();
        return static_cast<size_t>(v % n);
    }

    /// Fisher-Yates shuffle with this generator.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Worker cap for data-parallel loops; reads ADVKIT_THREADS once.
int worker_count();

}  // namespace advkit
