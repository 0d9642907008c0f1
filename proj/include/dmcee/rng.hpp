#pragma once

#include <array>
#include <cstdint>

namespace dmcee {

/// xoshiro256** (Blackman & Vigna) seeded through SplitMix64.
///
/// All distributions below are implemented here rather than taken from
/// <random>, whose distribution algorithms are implementation-defined; the
/// streams produced by this class are identical on every platform given the
/// same seed.
///
/// Stream splitting: `Rng::stream(seed, purpose, index)` starts from
/// `Rng(seed)`, applies `long_jump()` `purpose` times and `jump()` `index`
/// times. Jumps advance the state by 2^192 and 2^128 draws respectively, so
/// distinct (purpose, index) pairs never share draws.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed);

  static Rng stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index);

  std::uint64_t next();
  result_type operator()() { return next(); }
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  void jump();
  void long_jump();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  bool bernoulli(double p);
  /// Standard normal via the Marsaglia polar method (no cached spare).
  double normal();
  /// Poisson(mean); inversion by sequential search for mean < 30,
  /// PTRS (Hörmann 1993) otherwise.
  std::int64_t poisson(double mean);

  const std::array<std::uint64_t, 4>& state() const { return s_; }

 private:
  std::array<std::uint64_t, 4> s_{};
};

/// Stream purposes used across the library; fixed so that outputs stay
/// reproducible when new purposes are appended.
namespace streams {
inline constexpr std::uint64_t kSynthReplicate = 0;
inline constexpr std::uint64_t kObserveCovariates = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kTraining = 3;
inline constexpr std::uint64_t kInit = 4;
inline constexpr std::uint64_t kBaselines = 5;
inline constexpr std::uint64_t kDose = 6;
inline constexpr std::uint64_t kStandin = 7;
}  // namespace streams

}  // namespace dmcee
