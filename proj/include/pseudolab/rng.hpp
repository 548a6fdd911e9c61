#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace pseudolab {

using Engine = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a; stream names are compile-time literals so this only has to be stable.
constexpr std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Engine for a named sub-stream of a master seed. Distinct names (and
/// distinct counters under one name) give statistically independent streams,
/// so e.g. reseeding augmentation never shifts initialization.
inline Engine substream(std::uint64_t seed, std::string_view name, std::uint64_t counter = 0,
                        std::uint64_t counter2 = 0) {
  const std::uint64_t a = detail::splitmix64(seed ^ detail::hash_name(name));
  const std::uint64_t b = detail::splitmix64(a ^ detail::splitmix64(counter));
  const std::uint64_t c = detail::splitmix64(b ^ detail::splitmix64(counter2 + 0x51ed2701ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
  return Engine(seq);
}

/// A 64-bit seed for a named sub-stream, for APIs that take a plain seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view name, std::uint64_t counter = 0,
                                 std::uint64_t counter2 = 0) {
  Engine e = substream(seed, name, counter, counter2);
  return e();
}

}  // namespace pseudolab
