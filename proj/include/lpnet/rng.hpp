#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace lpnet {

// splitmix64, used to derive child seeds from (seed, tag) pairs so that
// every randomized stage of the pipeline is a pure function of the run seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG with explicit distribution code. The standard engine is
// portable by specification; the distributions below avoid the
// implementation-defined std::*_distribution layers so that identical seeds
// give identical streams everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x4d595df4d0f33173ULL) {}

  uint64_t next_u64() {
    // xorshift128+ style step on splitmix-expanded state
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0,1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int uniform_int(int n) { return n <= 1 ? 0 : int(next_u64() % uint64_t(n)); }

  // standard normal, Box-Muller
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates
  template <typename V>
  void shuffle(V& v) {
    for (int i = int(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[size_t(i)], v[size_t(j)]);
    }
  }

  // sample k distinct indices from [0,n) in selection order
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> idx(size_t(n));
    for (int i = 0; i < n; ++i) idx[size_t(i)] = i;
    shuffle(idx);
    idx.resize(size_t(k < n ? k : n));
    return idx;
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lpnet
