#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "fedseg/errors.hpp"

namespace fedseg {

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Deterministic counter-free PRNG (xoshiro-style splitmix stream). All
// distributions are implemented explicitly so sequences are bit-stable
// across platforms and standard-library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // Warm the state so nearby seeds decorrelate.
    next_u64();
    next_u64();
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range.
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw ContractError("Rng::uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  // Standard normal via Box-Muller, one cached value.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

  // Index into a discrete distribution with the given (non-negative) weights.
  template <typename Container>
  int categorical(const Container& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) throw ContractError("Rng::categorical: zero total weight");
    double x = uniform() * total;
    int idx = 0;
    for (double w : weights) {
      x -= w;
      if (x < 0.0) return idx;
      ++idx;
    }
    return static_cast<int>(idx - 1);
  }

 private:
  uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

// Stable seed derivation: FNV-1a over the label, mixed with the master seed.
// Used to give every pipeline stage / scene / client its own stream.
inline uint64_t derive_seed(uint64_t master, std::string_view label) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return detail::splitmix64(master ^ h);
}

inline uint64_t derive_seed(uint64_t master, uint64_t index) {
  return detail::splitmix64(master ^ detail::splitmix64(index + 0x51ed2701ULL));
}

}  // namespace fedseg
