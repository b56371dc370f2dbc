#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace probid {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed for a named sub-stream, e.g. derive_seed(seed, {kMarketStream, t}).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix_seed(base);
  for (std::uint64_t p : parts) h = mix_seed(h ^ mix_seed(p + 0x632BE59BD9B4E019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> parts = {}) {
  return Rng(derive_seed(base, parts));
}

// Stream identifiers.
inline constexpr std::uint64_t kMarketStream = 1;
inline constexpr std::uint64_t kCampaignStream = 2;
inline constexpr std::uint64_t kPolicyStream = 3;
inline constexpr std::uint64_t kMixtureStream = 4;
inline constexpr std::uint64_t kLengthStream = 5;
inline constexpr std::uint64_t kInitStream = 6;
inline constexpr std::uint64_t kBatchStream = 7;
inline constexpr std::uint64_t kCounterfactualStream = 8;
inline constexpr std::uint64_t kWindowStream = 9;
inline constexpr std::uint64_t kNoiseStream = 10;

}  // namespace probid
