#pragma once

#include <cstdint>
#include <vector>

namespace dfmed {

/// Deterministic PRNG (xoshiro256**) with splitmix64 seeding.
///
/// The standard <random> distributions are not guaranteed to produce the
/// same sequence across library implementations, so everything that feeds
/// corpus generation, parameter init, or negative sampling goes through
/// this class. Same seed, same stream id, same sequence, anywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) { reseed(seed); }

  void reseed(std::uint64_t seed);

  /// Independent stream derived from (seed, stream): used to keep
  /// per-dialogue generation deterministic under any processing order.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next();

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);

  /// Standard normal via Box-Muller (no cached spare, one fresh pair per call).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Bernoulli with probability p of true.
  bool chance(double p) { return uniform() < p; }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(0, i);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

  /// Uniform pick from a nonempty vector.
  template <typename T>
  const T& choice(const std::vector<T>& v) {
    return v[static_cast<std::size_t>(uniform_int(0, static_cast<int>(v.size()) - 1))];
  }

  /// k distinct elements sampled without replacement (k >= v.size() returns all).
  template <typename T>
  std::vector<T> sample(const std::vector<T>& v, std::size_t k) {
    std::vector<T> pool = v;
    if (k >= pool.size()) return pool;
    for (std::size_t i = 0; i < k; ++i) {
      int j = uniform_int(static_cast<int>(i), static_cast<int>(pool.size()) - 1);
      std::swap(pool[i], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(k);
    return pool;
  }

 private:
  std::uint64_t s_[4];
};

}  // namespace dfmed
