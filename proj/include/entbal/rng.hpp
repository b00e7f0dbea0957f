#pragma once

#include <cstdint>
#include <random>

namespace entbal {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for substream `stream`, item `index` of a master seed. Every
// replicate draws from its own engine, so results do not depend on which
// worker ran it.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(master) ^ (stream * 0xd1b54a32d192ed03ULL)) ^ index);
}

inline Engine make_engine(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  return Engine(derive_seed(master, stream, index));
}

}  // namespace entbal
