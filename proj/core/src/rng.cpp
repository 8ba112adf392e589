#include "lrlab/rng.hpp"

#include <cmath>
#include <numbers>

namespace lrlab {

namespace {
__extension__ using u128 = unsigned __int128;
}  // namespace

double Rng::normal() noexcept {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t bound) noexcept {
  if (bound <= 1) return 0;
  for (;;) {
    const u128 m = static_cast<u128>(next_u64()) * bound;
    const auto low = static_cast<std::uint64_t>(m);
    if (low >= bound || low >= (-bound) % bound) return static_cast<std::uint64_t>(m >> 64);
  }
}

}  // namespace lrlab
