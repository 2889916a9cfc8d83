#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace mtkd {

// Every random stream in the project is an mt19937_64 seeded through
// derive_seed(master, tag), so reruns with the same master seed reproduce
// augmentation, schedules and parameter draws bit-for-bit.

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index = 0) {
    return splitmix64(master ^ splitmix64(fnv1a(tag) + 0x632be59bd9b4e019ull * index));
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t master, std::string_view tag, uint64_t index = 0) {
    return Rng(derive_seed(master, tag, index));
}

// Uniform helpers with fixed bit-level behaviour (std::uniform_real_distribution
// is implementation-defined; these are not).
inline double uniform_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0); // [0,1)
}

inline double uniform_range(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform_unit(rng);
}

// Uniform integer in [0, n) by rejection, bias-free.
inline uint64_t uniform_index(Rng& rng, uint64_t n) {
    if (n <= 1) return 0;
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

template <typename T>
void shuffle_inplace(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(uniform_index(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace mtkd
