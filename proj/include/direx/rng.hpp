#pragma once

// Deterministic pseudo-random generator shared by every simulation path.
//
// Algorithm (reproducible from this description alone):
//   * seed expansion: splitmix64. state z += 0x9E3779B97F4A7C15;
//       z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//       z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
//       return z ^ (z >> 31).
//     The four words of the generator state are four consecutive splitmix64
//     outputs started from the 64-bit seed.
//   * generator: xoshiro256** (Blackman & Vigna).
//   * uniform double: (next() >> 11) * 2^-53, in [0, 1).
//   * stream derivation: Rng::derive(seed, tag) seeds a generator with
//       splitmix64(seed ^ splitmix64(tag)) so that distinct tags give
//       unrelated streams.

#include <array>
#include <bit>
#include <cstdint>
#include <limits>

namespace direx {

constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t mix64(std::uint64_t value) noexcept {
  std::uint64_t s = value;
  return splitmix64(s);
}

class Rng {
 public:
  using result_type = std::uint64_t;

  explicit constexpr Rng(std::uint64_t seed = 0) noexcept { reseed(seed); }

  static constexpr Rng derive(std::uint64_t seed, std::uint64_t tag) noexcept {
    return Rng(mix64(seed ^ mix64(tag)));
  }

  constexpr void reseed(std::uint64_t seed) noexcept {
    std::uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = std::rotl(s_[3], 45);
    return result;
  }

  constexpr double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  constexpr bool bit() noexcept { return ((*this)() >> 63) != 0; }

  /// Unbiased integer in [0, bound) by rejection.
  constexpr std::uint64_t below(std::uint64_t bound) noexcept {
    if (bound <= 1) return 0;
    const std::uint64_t limit = max() - max() % bound;
    std::uint64_t r = (*this)();
    while (r >= limit) r = (*this)();
    return r % bound;
  }

  friend constexpr bool operator==(const Rng&, const Rng&) = default;

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace direx
