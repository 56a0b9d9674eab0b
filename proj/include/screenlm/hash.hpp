#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace screenlm {

// FNV-1a. std::hash is not guaranteed stable across platforms or builds;
// cache keys and synthetic scores must be.
constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf, 16);
}

// Deterministic uniform stream keyed by a seed and up to two strings.
class KeyedRng {
public:
    explicit KeyedRng(std::uint64_t seed, std::string_view a = {}, std::string_view b = {})
        : state_(splitmix64(splitmix64(seed ^ fnv1a64(a)) ^ fnv1a64(b))) {}

    // Uniform draw in [0, 1).
    double uniform() {
        state_ = splitmix64(state_);
        return static_cast<double>(state_ >> 11) * 0x1.0p-53;
    }

    std::uint64_t next_u64() {
        state_ = splitmix64(state_);
        return state_;
    }

private:
    std::uint64_t state_;
};

} // namespace screenlm
