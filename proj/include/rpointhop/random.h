#pragma once

#include <cstdint>
#include <random>

namespace rpointhop {

// All stochastic operations draw from mt19937_64, whose output sequence is
// fixed by the C++ standard. Distributions come from Boost.Random so the
// mapping from raw draws to values does not depend on the standard library.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

/// SplitMix64 finalizer; derives independent sub-seeds from a master seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace rpointhop
