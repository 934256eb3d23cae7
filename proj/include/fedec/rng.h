#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fedec {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent streams from a master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b) {
  return mix_seed(mix_seed(seed, a), b);
}

// Stream tags so that data generation, partitioning and training never share
// a generator even when they start from the same master seed.
enum class Stream : std::uint64_t {
  kData = 0xda7a,
  kPartition = 0x9a47,
  kInit = 0x1417,
  kSampling = 0x5a39,
  kClient = 0xc11e,
  kFinal = 0xf17a,
};

inline std::uint64_t stream_seed(std::uint64_t master, Stream s) {
  return mix_seed(master, static_cast<std::uint64_t>(s));
}

}  // namespace fedec
