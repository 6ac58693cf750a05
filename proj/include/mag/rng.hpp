#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace mag {

// splitmix64; used to mix seeds and derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  return mix64(seed ^ mix64(salt));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                 std::uint64_t salt = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(seed ^ mix64(h) ^ mix64(salt + 0x5bd1e995ULL));
}

// Deterministic generator with self-contained distributions, so streams do
// not depend on standard-library distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x853c49e6748fea9bULL) {
    // warm up past low-entropy seeds
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() {
    state_ = mix64(state_ + 0x9e3779b97f4a7c15ULL);
    return state_;
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [lo, hi] inclusive
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    const std::uint64_t span = hi - lo + 1;
    return lo + static_cast<std::uint64_t>(
                    (static_cast<unsigned __int128>(next_u64()) * span) >> 64);
  }

  // standard normal via Box-Muller; second value of each pair is discarded
  // to keep the stream position a pure function of call count.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t state_;
};

}  // namespace mag
