#pragma once

// Seeded random number generation with named substreams.
//
// Core generator: xoshiro256++ seeded through splitmix64. Every generator
// remembers the 64-bit key it was derived from, so independent substreams
// can be split off at any point:
//
//   Rng root = Rng::from_seed(seed);
//   Rng data = root.stream("data");      // named stream (hashes the name)
//   Rng p    = data.child(step).child(i) // indexed stream per prompt
//
// Streams derived from distinct (name, index) paths never share state with
// their parent or each other. Normal deviates come from Box-Muller with a
// cached spare; draws are made in double and are identical for every
// instantiation within one build.

#include <cstdint>
#include <cmath>
#include <string_view>

namespace icl {

namespace detail {

inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

class Rng {
 public:
  Rng() { seed_state(0); }

  static Rng from_seed(uint64_t seed) {
    Rng r;
    r.seed_state(seed);
    return r;
  }

  // Independent named stream. Mixing constants keep stream(name) and
  // child(i) derivations from colliding.
  Rng stream(std::string_view name) const {
    uint64_t k = key_ ^ (0x6a09e667f3bcc909ull + detail::fnv1a64(name));
    uint64_t sm = k;
    return from_seed(detail::splitmix64(sm));
  }

  // Independent indexed substream (e.g. one per prompt).
  Rng child(uint64_t index) const {
    uint64_t sm = index ^ 0xbb67ae8584caa73bull;
    uint64_t k = key_ ^ detail::splitmix64(sm);
    uint64_t sm2 = k;
    return from_seed(detail::splitmix64(sm2));
  }

  uint64_t next_u64() {
    const uint64_t result = detail::rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = detail::rotl(s_[3], 45);
    return result;
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n) {
    // Rejection sampling over the top multiple of n.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; u1 mapped into (0, 1] so log stays finite.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  uint64_t key() const { return key_; }

 private:
  void seed_state(uint64_t seed) {
    key_ = seed;
    uint64_t sm = seed;
    for (auto& word : s_) word = detail::splitmix64(sm);
    has_spare_ = false;
    spare_ = 0.0;
  }

  uint64_t s_[4]{};
  uint64_t key_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace icl
