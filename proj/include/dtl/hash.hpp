#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace dtl {

// FNV-1a, used for parameter-byte digests and config hashes. Stable across
// builds and platforms.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t seed = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t seed = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), seed);
}

std::string hex64(std::uint64_t v);

}  // namespace dtl
