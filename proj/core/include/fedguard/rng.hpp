#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedguard {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and a tuple of
// coordinates, e.g. (master_seed, client_id, round). Order matters.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
  return Rng(derive_seed(base, parts));
}

// Stream tags keep the derived streams of one master seed apart.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kSelect = 2;
inline constexpr std::uint64_t kPartition = 3;
inline constexpr std::uint64_t kClient = 4;
inline constexpr std::uint64_t kAttack = 5;
inline constexpr std::uint64_t kSynthetic = 6;
}  // namespace stream

}  // namespace fedguard
