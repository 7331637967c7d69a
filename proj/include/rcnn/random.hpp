#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rcnn {

using Rng = std::mt19937_64;

// Derives an independent generator for a named purpose ("init", "shuffle",
// "mask", "dropout") from one run seed.
inline Rng make_stream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

}  // namespace rcnn
