#pragma once

#include <cstdint>

namespace tsrom {

// Fixed stream splitting: every consumer of randomness derives its own seed
// from the master seed and a stream id, so adding a consumer never shifts the
// draws of another.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace streams {
inline constexpr std::uint64_t encoder = 1;
inline constexpr std::uint64_t decoder = 2;
inline constexpr std::uint64_t spectrum = 3;
inline constexpr std::uint64_t minibatch = 4;
inline constexpr std::uint64_t dropout = 5;
inline constexpr std::uint64_t elbo_noise = 6;
inline constexpr std::uint64_t datagen = 7;
inline constexpr std::uint64_t mixing = 8;
inline constexpr std::uint64_t rollout = 9;
}  // namespace streams

}  // namespace tsrom
