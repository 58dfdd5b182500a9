#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace dermgen {

// All randomness in the pipeline flows through the two primitives below so
// that manifests, splits, and training runs reproduce bit-for-bit on any
// platform. The standard library distributions are avoided on purpose: their
// output is not pinned by the C++ standard.

/// FNV-1a 64-bit over raw bytes.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

/// SplitMix64 finalizer; also used as the stream-mixing function.
inline uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Deterministic sub-seed derivation: fold each component into the state
/// with the SplitMix64 finalizer. Order-sensitive by design.
inline uint64_t derive_seed(uint64_t base, uint64_t a) { return mix64(base ^ mix64(a)); }
inline uint64_t derive_seed(uint64_t base, std::string_view tag) { return derive_seed(base, fnv1a64(tag)); }
inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a) {
    return derive_seed(derive_seed(base, tag), a);
}
inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a, uint64_t b) {
    return derive_seed(derive_seed(derive_seed(base, tag), a), b);
}

/// SplitMix64 generator (Steele, Lea & Flood 2014). Small state, full 64-bit
/// output, identical on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Unbiased-enough bounded draw via 128-bit multiply (Lemire's method
    /// without the rejection step; bias is < 2^-64 * bound).
    uint64_t bounded(uint64_t bound) {
        return static_cast<uint64_t>(
            (static_cast<__uint128_t>(next_u64()) * static_cast<__uint128_t>(bound)) >> 64);
    }

    size_t index(size_t n) { return static_cast<size_t>(bounded(static_cast<uint64_t>(n))); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (one value per call; no cached spare,
    /// so the stream position is easy to reason about).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    /// Fisher-Yates shuffle using this generator.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
};

} // namespace dermgen
