#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mpiv {

// Deterministic RNG used everywhere randomness is needed. All draws go through
// this class so that a fixed seed reproduces runs bit-for-bit across platforms
// with the same libstdc++; the gaussian uses the Marsaglia polar method instead
// of std::normal_distribution, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive. Rejection sampling, no modulo bias.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<int64_t>(engine_());  // full 64-bit span
    uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return lo + static_cast<int64_t>(v % range);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via the Marsaglia polar method; pairs are cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  // Derives an independent deterministic stream (splitmix64 of the pair).
  Rng fork(uint64_t stream) {
    uint64_t z = next_u64() + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mpiv
