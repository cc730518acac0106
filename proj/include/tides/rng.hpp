#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace tides {

// Seedable, splittable generator.
//
// Engine: std::mt19937_64 seeded with a SplitMix64-whitened seed.
// Substreams: split(name) derives a child seed as
//   splitmix64(seed ^ fnv1a64(name))
// so a child depends only on the parent's seed and the name, never on how many
// draws the parent has made. All variate transforms below are written out
// explicitly so the streams do not depend on the standard library's
// implementation-defined distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  Rng split(std::string_view name) const;
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Box-Muller, one variate per call (the second is discarded).
  double normal();
  // Unbiased integer in [0, n).
  std::size_t index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  // k distinct values from [0, n) in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

}  // namespace tides
