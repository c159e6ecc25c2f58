#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace denpg {

// splitmix64 finalizer, used to fold stream tags into seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Stream tags. Every random decision in a run draws from a stream derived
// from (master seed, tag, indices...), never from shared mutable state, so
// results do not depend on scheduling order.
namespace stream {
inline constexpr std::uint64_t init_batch = 1;
inline constexpr std::uint64_t step_sample = 2;
inline constexpr std::uint64_t fim_extra = 3;
inline constexpr std::uint64_t eval = 4;
inline constexpr std::uint64_t theta0 = 5;
inline constexpr std::uint64_t multitask = 6;
inline constexpr std::uint64_t output_draw = 7;
inline constexpr std::uint64_t env_build = 8;
inline constexpr std::uint64_t eval_grid = 9;
}  // namespace stream

// Deterministic random stream with a fixed, documented draw discipline:
//   u01        one engine call, 53-bit mantissa in [0,1)
//   uniform_int one u01 call
//   categorical one u01 call, CDF walk in index order
//   normal      two u01 calls (Box-Muller, cosine branch, no caching)
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  double u01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform draw from {0, ..., n-1}.
  int uniform_int(int n) {
    int k = static_cast<int>(u01() * static_cast<double>(n));
    return k >= n ? n - 1 : k;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  // Index i with probability p[i]; p must sum to ~1. Shortfall from rounding
  // lands on the last index.
  int categorical(std::span<const double> p) {
    const double u = u01();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < p.size(); ++i) {
      acc += p[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;
  }

  double normal() {
    double u1 = u01();
    while (u1 == 0.0) u1 = u01();
    const double u2 = u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

 private:
  std::mt19937_64 engine_;
};

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag, std::uint64_t a = 0,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = mix64(master);
  s = mix64(s ^ tag);
  s = mix64(s ^ a);
  s = mix64(s ^ b);
  s = mix64(s ^ c);
  return s;
}

inline RngStream make_stream(std::uint64_t master, std::uint64_t tag, std::uint64_t a = 0,
                             std::uint64_t b = 0, std::uint64_t c = 0) {
  return RngStream(derive_seed(master, tag, a, b, c));
}

}  // namespace denpg
