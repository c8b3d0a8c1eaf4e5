#pragma once

#include <cstdint>
#include <random>

namespace densconf {

// Single generator type used everywhere. Callers construct it from an explicit
// seed and pass it down; nothing in the library keeps hidden random state.
using Rng = std::mt19937_64;

// Derives an independent stream seed from (seed, stream) via splitmix64 mixing,
// so one experiment seed can drive several decoupled generators.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace densconf
