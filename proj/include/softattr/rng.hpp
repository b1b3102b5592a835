#pragma once

#include <cstdint>

namespace softattr {

/// SplitMix64 (Steele, Lea, Flood). Used to derive well-mixed seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/**
 * xorshift64* (Vigna): state ^= state >> 12; state ^= state << 25;
 * state ^= state >> 27; output = state * 0x2545F4914F6CDD1D.
 * The state is initialised from one SplitMix64 step of the seed, which is
 * never zero for the inputs we use (a zero result is bumped to 1).
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    state_ = splitmix64(s);
    if (state_ == 0) state_ = 1;
  }

  /// Stream dedicated to one (seed, index) pair.
  static Rng for_index(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t s = seed;
    const std::uint64_t a = splitmix64(s);
    return Rng(a ^ (index * 0xD1B54A32D192ED03ULL));
  }

  std::uint64_t next_u64() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n); n > 0. Multiply-shift on the top 32 bits.
  std::uint64_t below(std::uint64_t n) {
    return ((next_u64() >> 32) * n) >> 32;
  }

 private:
  std::uint64_t state_;
};

}  // namespace softattr
