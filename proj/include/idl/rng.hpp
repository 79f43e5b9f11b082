#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "idl/text.hpp"

namespace idl::rng {

// Named sub-stream derivation: seed ^ hash(name) ^ hash(key). Adding a new
// named stream never perturbs the draws of an existing one.
inline std::uint64_t derive(std::uint64_t seed, std::string_view name, std::string_view key = {}) {
    std::uint64_t h = seed ^ text::fnv1a64(name);
    if (!key.empty()) h ^= text::fnv1a64(key);
    return h;
}

inline std::mt19937_64 substream(std::uint64_t seed, std::string_view name, std::string_view key = {}) {
    return std::mt19937_64(derive(seed, name, key));
}

// std:: distributions are not bit-stable across standard libraries, so the
// mappings from raw engine output are pinned here.
inline double next_unit(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline std::size_t next_index(std::mt19937_64& g, std::size_t n) {
    return static_cast<std::size_t>(g() % n);
}

inline void shuffle(std::vector<std::size_t>& v, std::mt19937_64& g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[next_index(g, i)]);
    }
}

}  // namespace idl::rng
