#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string_view>
#include <vector>

namespace roda {

// splitmix64 step (Steele/Lea/Flood finalizer). Used both as the core PRNG
// and as a mixing function for deriving independent sub-streams from a seed.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Derives a stream key from a seed plus tags. Each distinct tag sequence gives
// a statistically independent stream; used to decouple e.g. batch-order draws
// from jitter draws so ablation arms share identical batch schedules.
inline uint64_t mix_key(uint64_t a, uint64_t b) {
    uint64_t s = a;
    splitmix64(s);
    s ^= b + 0x9E3779B97F4A7C15ULL + (s << 6) + (s >> 2);
    uint64_t t = s;
    return splitmix64(t);
}

inline uint64_t mix_key(uint64_t a, uint64_t b, uint64_t c) {
    return mix_key(mix_key(a, b), c);
}

// FNV-1a 64-bit. Manifest file hashes and string-keyed stream derivation.
inline uint64_t fnv1a64(const void* data, size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xCBF29CE484222325ULL;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

// Deterministic PRNG. All stochastic choices in the library route through this
// type so runs are reproducible bit-for-bit across platforms and thread counts.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed), spare_valid_(false) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in (0, 1]; never zero, safe under log().
    double next_double_open() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // Unbiased integer in [0, bound) by rejection.
    uint64_t below(uint64_t bound) {
        if (bound <= 1) return 0;
        uint64_t threshold = (0ULL - bound) % bound;  // 2^64 mod bound
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double normal() {
        if (spare_valid_) {
            spare_valid_ = false;
            return spare_;
        }
        double u1 = next_double_open();
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        spare_valid_ = true;
        return r * std::cos(a);
    }

    // Fisher-Yates permutation of 0..n-1.
    std::vector<uint32_t> permutation(uint32_t n) {
        std::vector<uint32_t> p(n);
        for (uint32_t i = 0; i < n; ++i) p[i] = i;
        for (uint32_t i = n; i > 1; --i) {
            uint32_t j = static_cast<uint32_t>(below(i));
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool spare_valid_;
};

}  // namespace roda
