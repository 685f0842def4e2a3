#ifndef ACE_RNG_HPP
#define ACE_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace ace {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent generator for a named component ("data", "init",
// "sampler", ...) from one run seed. FNV-1a over the name, mixed with the seed.
inline Rng make_stream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return Rng(splitmix64(seed ^ splitmix64(h)));
}

}  // namespace ace

#endif  // ACE_RNG_HPP
