#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "flowguard/diffcore/tensor.hpp"

namespace flowguard {

// SplitMix64 counter generator with Box-Muller normals. Every draw is a pure
// function of (seed, number of prior draws), so sequences match across
// platforms and standard library implementations.
class DeterministicRng {
 public:
  struct State {
    std::uint64_t counter = 0;
    bool has_spare = false;
    double spare = 0.0;
    friend bool operator==(const State&, const State&) = default;
  };

  explicit DeterministicRng(std::uint64_t seed = 0) { state_.counter = seed; }

  std::uint64_t seed_state() const noexcept { return state_.counter; }
  const State& state() const noexcept { return state_; }
  void restore(const State& s) noexcept { state_ = s; }

  std::uint64_t next_u64() noexcept {
    std::uint64_t z = (state_.counter += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) by rejection, free of modulo bias.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) throw ContractError("rng: uniform_below(0)");
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  double normal() noexcept {
    if (state_.has_spare) {
      state_.has_spare = false;
      return state_.spare;
    }
    // u1 in (0, 1] keeps the log finite.
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    state_.spare = r * std::sin(angle);
    state_.has_spare = true;
    return r * std::cos(angle);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  Tensor standard_normal(const Shape& shape) {
    Tensor t(shape);
    for (double& v : t.values()) v = normal();
    return t;
  }

  // Fisher-Yates over any random-access range.
  template <typename Range>
  void shuffle(Range& range) {
    const std::size_t n = std::size(range);
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = uniform_below(i);
      using std::swap;
      swap(range[i - 1], range[j]);
    }
  }

 private:
  State state_;
};

// Independent generator for (seed, tag). Tags name separate streams of one
// run so consuming one stream never shifts another.
inline DeterministicRng substream(std::uint64_t seed, std::uint64_t tag) {
  DeterministicRng mixer(seed ^ (tag * 0xD1B54A32D192ED03ULL));
  return DeterministicRng(mixer.next_u64());
}

inline Tensor draw_standard_normal(DeterministicRng& rng, const Shape& shape) {
  return rng.standard_normal(shape);
}

}  // namespace flowguard
