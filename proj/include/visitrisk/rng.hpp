#pragma once

#include <cstdint>
#include <string_view>

namespace visitrisk {

/// SplitMix64 step. Used for seeding and for deriving independent stream seeds.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derives a child seed from a parent seed and a stream number.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
/// Same, keyed by a label (FNV-1a of the label is the stream number).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

/// xoshiro256** (Blackman & Vigna), state filled from SplitMix64(seed).
///
/// Every sampler in the project draws from this generator rather than from
/// <random> distributions, whose output is implementation-defined, so index
/// files and cohorts reproduce across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer in [0, n), unbiased (Lemire's multiply-and-reject). n > 0.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via the Marsaglia polar method.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t s_[4];
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace visitrisk
