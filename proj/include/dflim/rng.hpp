#pragma once

#include <cstdint>
#include <random>

namespace dflim {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed for an independent stream keyed by (seed, replication, index).
constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t replication, std::int64_t index) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ mix64(replication + 0x632BE59BD9B4E019ull));
  h = mix64(h ^ mix64(static_cast<std::uint64_t>(index) + 0x8CB92BA72F3D8DD7ull));
  return h;
}

using Engine = std::mt19937_64;

inline Engine make_stream(std::uint64_t seed, std::uint64_t replication, std::int64_t index) {
  return Engine(stream_seed(seed, replication, index));
}

}  // namespace dflim
