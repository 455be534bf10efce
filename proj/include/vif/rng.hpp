#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace vif {

/// Mixes a stream label into a base seed so that independent consumers
/// (weights, scene, decoding, ...) never share a generator state.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view stream) {
    // FNV-1a over the label, then a splitmix64 finalizer round.
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : stream) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::uint64_t z = base + 0x9e3779b97f4a7c15ull + h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view stream, std::uint64_t index) {
    return derive_seed(base ^ (0xd1b54a32d192ed03ull * (index + 1)), stream);
}

/// Deterministic generator with hand-specified uniform/normal transforms.
/// std::mt19937_64 is pinned by the standard, the distributions are not, so
/// rolling the transforms here keeps weights and samples identical across
/// standard libraries (golden files depend on that).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random mantissa bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [lo, hi] via rejection-free modulo on a wide range.
    std::uint64_t uniform_index(std::uint64_t n) {
        // n is tiny compared to 2^64 here; modulo bias is < 2^-40.
        return engine_() % n;
    }

    /// Standard normal via Box-Muller (the cached second value is dropped so
    /// each draw consumes exactly two engine outputs).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace vif
