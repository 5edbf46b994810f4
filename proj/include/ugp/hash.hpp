#pragma once

#include <cstdint>
#include <string_view>

namespace ugp {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Stable 64-bit hash of (seed, text); independent of platform and listing order.
inline uint64_t hash_combine(uint64_t seed, std::string_view text) {
  return splitmix64(splitmix64(seed) ^ fnv1a64(text));
}

/// Seeds stay within the signed 63-bit range so they survive JSON readers
/// that only handle int64.
inline int64_t json_safe_seed(uint64_t h) { return static_cast<int64_t>(h >> 1); }

}  // namespace ugp
