#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace ocn {

/// Deterministic splitmix64 generator. One 64-bit word of state, so it is
/// trivially serializable and bitwise reproducible across platforms; the
/// standard library distributions are implementation-defined and are not used.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; no cached spare, so state stays one word.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    /// Uniform integer in [0, n) without modulo bias.
    int64_t below(int64_t n) {
        const uint64_t bound = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return static_cast<int64_t>(x % bound);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            const int64_t j = below(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

    /// Independent stream derived from a master seed; used so that e.g. the
    /// shuffle order of epoch k is a pure function of (seed, k).
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        Rng r(seed ^ (0xD1B54A32D192ED03ULL * (stream + 1)));
        return r.next_u64();
    }

private:
    uint64_t state_;
};

} // namespace ocn
