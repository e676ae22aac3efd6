#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <vector>

namespace hte {

/// SplitMix64 finalizer. Used as the seed-mixing function for all substreams.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Purpose tags for substreams. The numeric values are part of the
/// reproducibility contract; do not renumber.
enum class Stream : std::uint64_t {
  covariates = 0x01,
  treatment = 0x02,
  noise = 0x03,
  nuisance_outcome = 0x11,
  nuisance_treatment = 0x12,
  tree = 0x21,
  test_covariates = 0x31,
  replication = 0x41,
  forest = 0x42,
  bootstrap = 0x51,
};

/// Derive a child seed from a root seed and a sequence of keys.
/// child = fold(k -> splitmix64(acc ^ splitmix64(k))) starting from root.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t acc = splitmix64(root);
  for (std::uint64_t k : keys) acc = splitmix64(acc ^ splitmix64(k + 0x632BE59BD9B4E019ULL));
  return acc;
}

inline std::uint64_t derive_seed(std::uint64_t root, Stream s) noexcept {
  return derive_seed(root, {static_cast<std::uint64_t>(s)});
}

inline std::uint64_t derive_seed(std::uint64_t root, Stream s, std::uint64_t index) noexcept {
  return derive_seed(root, {static_cast<std::uint64_t>(s), index});
}

/// Random stream over mt19937_64 with distribution code kept in-house so that
/// draws are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound) by rejection (no modulo bias).
  std::uint64_t index(std::uint64_t bound) {
    const std::uint64_t limit = bound == 0 ? 0 : (~std::uint64_t{0} - bound + 1) % bound;
    for (;;) {
      std::uint64_t r = engine_();
      if (r >= limit) return r % bound;
    }
  }

  /// Standard normal via the Marsaglia polar method.
  double normal() {
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
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// First k entries of a uniformly random permutation of 0..n-1.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (k > n) k = n;
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + static_cast<std::size_t>(index(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace hte
