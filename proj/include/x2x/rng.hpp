#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace x2x {

// splitmix64 step; the workhorse behind every stochastic choice in the
// pipeline. Implemented here rather than via <random> so that streams are
// identical across standard libraries and the artifacts stay byte-stable.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Combine a seed with stream labels into an independent derived seed.
inline std::uint64_t mix_seed(std::uint64_t seed,
                              std::initializer_list<std::uint64_t> labels) {
  std::uint64_t state = seed ^ 0x2545f4914f6cdd1dULL;
  for (std::uint64_t label : labels) {
    state ^= label + 0x9e3779b97f4a7c15ULL + (state << 6) + (state >> 2);
    splitmix64(state);
  }
  return splitmix64(state);
}

class DetRng {
 public:
  explicit DetRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    return n == 0 ? 0 : next_u64() % n;
  }

  // Standard normal via Box-Muller; one draw per call, no cached spare, so
  // the stream position is a pure function of call count.
  double next_gaussian() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t state_;
};

}  // namespace x2x
