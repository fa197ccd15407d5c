#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace earlycls {

// splitmix64 step, used to derive independent stream seeds from a base seed
// plus salt words. Keeps every randomized stage a pure function of
// (config seed, stream identity).
inline uint64_t mix_seed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t base, std::initializer_list<uint64_t> salts) {
  uint64_t s = mix_seed(base);
  for (uint64_t w : salts) s = mix_seed(s ^ w);
  return s;
}

// mt19937_64 with hand-rolled draw helpers so the byte-for-byte behavior is
// pinned by this file, not by the standard library's distribution objects.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n), rejection sampled (n > 0)
  int uniform_int(int n) {
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return static_cast<int>(x % un);
  }

  // standard normal via Box-Muller (no spare caching)
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(i + 1))]);
    }
  }

  // k of n indices in increasing order (selection sampling)
  std::vector<int> sample_indices(int n, int k) {
    std::vector<int> out;
    out.reserve(static_cast<size_t>(k));
    int needed = k;
    for (int i = 0; i < n && needed > 0; ++i) {
      if (uniform() * (n - i) < needed) {
        out.push_back(i);
        --needed;
      }
    }
    return out;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace earlycls
