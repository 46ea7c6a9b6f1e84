#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace graft {

// splitmix64 step; the generator behind all randomness in the project.
// Fully specified here so that seeded runs are reproducible independent of
// the standard library's distribution implementations.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Stateless mix of a seed with stream tags. Used to derive independent
// streams (per step, per purpose) from one run seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t s = seed;
  splitmix64(s);
  s ^= 0xD1B54A32D192ED03ULL * (a + 1);
  splitmix64(s);
  s ^= 0x8CB92BA72F3D8DD7ULL * (b + 1);
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {
    // Warm up so that small seeds do not produce correlated first draws.
    splitmix64(state_);
  }

  static Rng from(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return Rng(mix_seed(seed, a, b));
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe as a log() argument.
  double uniform_pos() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

  // Box-Muller without caching the spare: two draws per sample keeps the
  // stream position a pure function of the sample count.
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  std::uint64_t state_;
};

// FNV-1a over bytes; used for stable config hashing.
inline std::uint64_t fnv1a(const void* data, std::size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace graft
