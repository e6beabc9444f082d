#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace scdsc {

using Rng = std::mt19937_64;

/// Derives an independent generator for a named purpose ("init", "kmeans",
/// "shuffle", ...) from a run seed, so that consumers of one stream never
/// perturb another.
inline Rng substream(std::uint64_t seed, std::string_view name) {
  std::uint64_t hash = 1469598103934665603ULL;  // FNV-1a
  for (char c : name) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(hash), static_cast<std::uint32_t>(hash >> 32)};
  return Rng(seq);
}

/// Uniform double in [0, 1) built from raw generator output, so results do
/// not depend on the standard library's distribution implementation.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, bound).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t bound) {
  return static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(bound)) % bound;
}

/// Standard normal deviate via Box-Muller.
double standard_normal(Rng& rng);

}  // namespace scdsc
