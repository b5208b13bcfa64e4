#pragma once

#include <cstdint>
#include <string_view>

// Stable, seedable hashing and uniform draws. Everything in the engine that
// needs randomness derives it from these so runs are bit-identical across
// platforms (std:: distributions make no such promise).

namespace trellis::rng {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

constexpr std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = kFnvOffset) {
    for (unsigned char c : data) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

// splitmix64 finalizer; good avalanche, cheap.
constexpr std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t combine(std::uint64_t h, std::uint64_t v) {
    return mix(h ^ mix(v));
}

constexpr std::uint64_t combine(std::uint64_t h, std::string_view s) {
    return combine(h, fnv1a64(s));
}

// Uniform in [0, 1) from the top 53 bits.
constexpr double u01(std::uint64_t h) {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Counter-based stream: draw(seed, n) is the n-th value of stream `seed`.
constexpr std::uint64_t draw(std::uint64_t seed, std::uint64_t counter) {
    return mix(seed ^ mix(counter + 0x632be59bd9b4e019ull));
}

} // namespace trellis::rng
