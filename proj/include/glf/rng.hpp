#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace glf {

using Rng = std::mt19937_64;

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Order-sensitive combination of seed components, e.g. (global seed, round, client id).
constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

// Stream tags keep independent random streams apart.
namespace stream {
inline constexpr std::uint64_t kInit = 0x1001;
inline constexpr std::uint64_t kPartition = 0x1002;
inline constexpr std::uint64_t kSelect = 0x1003;
inline constexpr std::uint64_t kClient = 0x1004;
inline constexpr std::uint64_t kSplit = 0x1005;
inline constexpr std::uint64_t kGlobalTest = 0x1006;
inline constexpr std::uint64_t kSynth = 0x1007;
}  // namespace stream

}  // namespace glf
