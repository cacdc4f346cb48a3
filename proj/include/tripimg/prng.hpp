#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace tripimg {

// SplitMix64; used to seed the main generator and to derive per-stage seeds.
struct SplitMix64 {
  uint64_t state;

  explicit SplitMix64(uint64_t seed) : state(seed) {}

  uint64_t next() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
};

// xoshiro256**, seeded through SplitMix64. All randomized behavior in the
// project goes through this generator so results are identical across
// platforms and standard-library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& s : s_) s = sm.next();
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n). n must be nonzero.
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  // Fisher-Yates, identical on every platform.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<size_t>(next_below(i))]);
    }
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4];
};

// Stage seeds are consecutive outputs of a SplitMix64 stream seeded with the
// master seed; stage i receives output i.
inline uint64_t derive_seed(uint64_t master, unsigned stage_index) {
  SplitMix64 sm(master);
  uint64_t out = 0;
  for (unsigned i = 0; i <= stage_index; ++i) out = sm.next();
  return out;
}

}  // namespace tripimg
