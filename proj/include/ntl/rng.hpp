#pragma once

#include <cstdint>
#include <vector>

namespace ntl {

// Deterministic PRNG (xoshiro256++ seeded through splitmix64). All sampling
// used by the library goes through this class so that results are
// bit-reproducible across platforms and standard library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform double in [0, 1) with 53 bits of precision.
  double uniform();
  // Uniform double in [a, b).
  double uniform(double a, double b);
  // Uniform integer in [0, n). Requires n > 0.
  std::int64_t uniform_int(std::int64_t n);
  // Standard normal via Box-Muller (second draw cached).
  double normal();
  double normal(double mean, double stddev);

  void fill_normal(double* dst, std::size_t n);
  void fill_uniform(double* dst, std::size_t n, double a, double b);

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // 0..n-1 shuffled.
  std::vector<std::int64_t> permutation(std::int64_t n);

  // Derives an independent stream seed (splitmix64 chain); used to give each
  // pipeline stage / cell / epoch its own generator.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ntl
