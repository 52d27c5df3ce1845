// Counter-based random streams. Every stochastic draw in the simulator is
// keyed by (master seed, role, agent, outer index, inner index), so a draw is
// a pure function of its key: re-requesting the same key reproduces the same
// realization bit for bit, independently of call order or thread schedule.
#pragma once

#include <cmath>
#include <cstdint>

namespace dsbo {

// One splitmix64 step: advances the state and returns a well-mixed 64-bit word.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Folds one key field into a seed. Chaining mix_key builds a stream key from
// an arbitrary tuple of integers.
inline std::uint64_t mix_key(std::uint64_t seed, std::uint64_t field) {
  std::uint64_t s = seed ^ (field + 0x9E3779B97F4A7C15ull + (seed << 6) + (seed >> 2));
  splitmix64_next(s);
  return s;
}

// Small deterministic generator over a splitmix64 stream. Box-Muller for
// normals (explicit, so results do not depend on the C++ library's
// distribution implementation).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in (0, 1]: never returns 0 so it is safe under log().
  double uniform01() {
    const std::uint64_t bits = next_u64() >> 11;  // 53 bits
    return (static_cast<double>(bits) + 1.0) * 0x1.0p-53;
  }

  // Uniform integer in [0, n), n >= 1. Fixed-point multiply; bias is
  // negligible (< 2^-53 relative) for the desk-scale set sizes used here.
  std::uint64_t uniform_below(std::uint64_t n) {
    const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
  }

  // Standard normal via Box-Muller; the antithetic partner is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 6.283185307179586476925286766559 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace dsbo
