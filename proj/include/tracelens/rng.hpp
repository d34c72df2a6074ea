#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

#include "tracelens/common.hpp"

namespace tracelens {

// xoshiro256** seeded through splitmix64. Hand-rolled so every stochastic
// choice in the pipeline is bit-reproducible across platforms and standard
// library versions (std distributions are implementation-defined).
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& s : state_) {
            x += 0x9e3779b97f4a7c15ull;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            s = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        uint64_t result = rotl(state_[1] * 5, 7) * 9;
        uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform in [0, 1), 53-bit resolution
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // standard normal via Box-Muller with cached spare
    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = 1.0 - next_double();  // (0, 1], keeps log finite
        double r = std::sqrt(-2.0 * std::log(u));
        double theta = 2.0 * std::numbers::pi * next_double();
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // bounded draw via 128-bit multiply-shift; bias is ~n/2^64, irrelevant here
    uint64_t next_below(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), in draw order
    std::vector<size_t> sample_indices(size_t n, size_t k) {
        if (k > n) fail("usage", "sample_indices: k exceeds n");
        std::vector<size_t> pool(n);
        for (size_t i = 0; i < n; ++i) pool[i] = i;
        for (size_t i = 0; i < k; ++i) {
            size_t j = i + static_cast<size_t>(next_below(n - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Independent substream derivation: hash (seed, tag, indices) into a fresh seed.
inline uint64_t derive_seed(uint64_t seed, std::string_view tag,
                            uint64_t a = 0, uint64_t b = 0, uint64_t c = 0) {
    Fnv1a h;
    h.feed_u64(seed).feed(tag).feed_u64(a).feed_u64(b).feed_u64(c);
    return h.value();
}

inline Rng derive_rng(uint64_t seed, std::string_view tag,
                      uint64_t a = 0, uint64_t b = 0, uint64_t c = 0) {
    return Rng(derive_seed(seed, tag, a, b, c));
}

}  // namespace tracelens
