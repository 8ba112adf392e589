#pragma once

#include <cstdint>
#include <span>

namespace lrlab {

/// SplitMix64 used as a counter-based generator: the n-th output is
/// mix(seed + n * 0x9E3779B97F4A7C15). Every stream in the project is derived
/// from this so that other implementations can reproduce it bit for bit.
///
/// uniform() takes the top 53 bits; normal() is the Box-Muller cosine branch
/// on two consecutive uniforms (the first shifted into (0, 1]).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : seed_(seed) {}

  static std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix(seed_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double normal() noexcept;

  void fill_normal(std::span<double> out) noexcept {
    for (double& x : out) x = normal();
  }

  /// Uniform integer in [0, bound) by Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t bound) noexcept;

  /// Independent child stream, e.g. per epoch or per sweep point.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) noexcept {
    return mix(seed ^ mix(salt + 0x632BE59BD9B4E019ULL));
  }

  std::uint64_t draws() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace lrlab
