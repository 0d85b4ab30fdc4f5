#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace densforge {

std::uint64_t splitmix64(std::uint64_t x);

// Stable 64-bit hashes used to derive independent per-item seeds.
std::uint64_t hash64(std::uint64_t seed, std::uint64_t value);
std::uint64_t hash64(std::uint64_t seed, std::string_view key);

// mt19937_64 with distribution helpers implemented here rather than through
// <random> distributions, whose output is not specified across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  // Uniform integer in [lo, hi].
  long long between(long long lo, long long hi);
  double normal();

 private:
  std::mt19937_64 engine_;
};

// k distinct indices drawn uniformly from [0, n), returned in ascending order.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng);

}  // namespace densforge
