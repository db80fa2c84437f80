#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace xmodal {

// Deterministic random source. mt19937_64 is fully specified by the standard,
// but the standard *distributions* are not, so every draw goes through our own
// transforms. This keeps corpora, checkpoints and result files bit-identical
// across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53 bits of precision.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased via rejection.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Uniform integer in [lo, hi], both ends inclusive.
  int uniform_int(int lo, int hi) {
    if (lo > hi) throw std::invalid_argument("uniform_int: empty range");
    return lo + static_cast<int>(uniform_index(
                    static_cast<std::uint64_t>(hi) - lo + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller (cosine branch). Two uniforms per draw, no cached spare, so the
  // stream position after n calls is always 2n.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double z = std::sqrt(-2.0 * std::log(u1)) *
                     std::cos(2.0 * std::numbers::pi * u2);
    return mean + stddev * z;
  }

  // First k elements of a random permutation of [0, n).
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k < 0 || k > n) throw std::invalid_argument("sample_without_replacement: k out of range");
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    for (int i = 0; i < k; ++i) {
      const int j = i + static_cast<int>(uniform_index(n - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

  // Independent child stream. Hashing (seed, id) rather than drawing from the
  // parent keeps sibling streams decoupled: consuming more from one never
  // shifts another. The synth generator relies on this to vary label noise
  // without perturbing scene layout.
  Rng fork(std::uint64_t stream_id) const {
    std::uint64_t x = seed_ ^ (0x9E3779B97F4A7C15ULL * (stream_id + 1));
    // splitmix64 finalizer
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    x = x ^ (x >> 31);
    return Rng(x);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace xmodal
