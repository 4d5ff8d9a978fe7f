#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "core/error.hpp"

namespace mvi {

// xoshiro256++ seeded through splitmix64. Self-contained so that streams are
// reproducible bit-for-bit across platforms and standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0,1), 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range.
  int uniform_int(int lo, int hi) {
    require_arg(hi >= lo, "uniform_int: empty range");
    const uint64_t span = uint64_t(hi) - uint64_t(lo) + 1;
    return lo + int(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; the paired sample is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent child stream derived from the current state and a tag, so
  // subsystems can be reseeded without coupling their draw counts.
  Rng split(std::string_view tag) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char ch : tag) {
      h ^= uint64_t(uint8_t(ch));
      h *= 0x100000001b3ull;
    }
    return Rng(next_u64() ^ h);
  }

 private:
  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

  uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mvi
