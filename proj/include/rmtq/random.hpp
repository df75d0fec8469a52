#pragma once

#include <cstdint>
#include <random>

namespace rmtq {

/// Seeded pseudo-random source. Satisfies UniformRandomBitGenerator so it can
/// drive any <random> distribution, and adds the two draws used everywhere.
///
/// Construct only from an explicit seed (or a substream derived by the
/// harness); there is intentionally no default/wall-clock constructor.
class RandomSource {
 public:
  using result_type = std::mt19937_64::result_type;

  explicit RandomSource(std::uint64_t seed) : engine_(seed) {}
  explicit RandomSource(std::seed_seq& seq) : engine_(seq) {}

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  /// Standard normal N(0,1).
  double normal() { return normal_(engine_); }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * std::generate_canonical<double, 53>(engine_);
  }

  /// Fair sign, +1 or -1.
  double sign() { return (engine_() >> 63) ? 1.0 : -1.0; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace rmtq
