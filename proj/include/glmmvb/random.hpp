#pragma once

// Counter-based random numbers. Every stochastic routine in the library draws
// from Philox4x32-10 (Salmon et al., SC'11) through the samplers below, which
// use only the raw 32-bit outputs and elementary libm functions, so streams
// reproduce across platforms and standard-library implementations.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace glmmvb {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of sub-stream `index` of `seed`: mix64(mix64(seed) + index).
/// Used for per-piece fits and any other independent work item.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return mix64(mix64(seed) + index);
}

class Philox {
 public:
  using result_type = std::uint64_t;
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  explicit Philox(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        counter_{0, 0, static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)} {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  /// The raw bijection: ten Philox rounds of `counter` under `key`.
  static constexpr Block encrypt(Block ctr, Key key) noexcept {
    constexpr std::uint64_t m0 = 0xD2511F53u;
    constexpr std::uint64_t m1 = 0xCD9E8D57u;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = m0 * ctr[0];
      const std::uint64_t p1 = m1 * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += 0x9E3779B9u;
      key[1] += 0xBB67AE85u;
    }
    return ctr;
  }

  std::uint32_t next_u32() noexcept {
    if (used_ == 4) {
      buffer_ = encrypt(counter_, key_);
      if (++counter_[0] == 0) {
        ++counter_[1];
      }
      used_ = 0;
    }
    return buffer_[used_++];
  }

  result_type operator()() noexcept {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  friend bool operator==(const Philox&, const Philox&) = default;

 private:
  Key key_;
  Block counter_;
  Block buffer_{};
  int used_ = 4;
};

/// Uniform on [0, 1) with 53 random bits.
inline double uniform01(Philox& rng) noexcept {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer on [0, n) by rejection, no modulo bias.
inline std::uint64_t uniform_index(Philox& rng, std::uint64_t n) noexcept {
  if (n <= 1) {
    return 0;
  }
  const std::uint64_t limit = Philox::max() - Philox::max() % n;
  std::uint64_t x = rng();
  while (x >= limit) {
    x = rng();
  }
  return x % n;
}

/// Box-Muller, cosine branch only; consumes exactly two uniforms.
inline double standard_normal(Philox& rng) noexcept {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline bool bernoulli(Philox& rng, double prob) noexcept { return uniform01(rng) < prob; }

/// Poisson variate: sequential inversion below mean 10, Hormann's PTRS above.
inline std::int64_t poisson_variate(Philox& rng, double lambda) {
  if (!(lambda > 0.0)) {
    return 0;
  }
  if (lambda < 10.0) {
    const double u = uniform01(rng);
    double p = std::exp(-lambda);
    double cdf = p;
    std::int64_t k = 0;
    while (u >= cdf && k < 1000) {
      ++k;
      p *= lambda / static_cast<double>(k);
      cdf += p;
    }
    return k;
  }
  const double slam = std::sqrt(lambda);
  const double loglam = std::log(lambda);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = uniform01(rng) - 0.5;
    const double v = uniform01(rng);
    const double us = 0.5 - std::abs(u);
    const auto k = static_cast<std::int64_t>(std::floor((2.0 * a / us + b) * u + lambda + 0.43));
    if (us >= 0.07 && v <= vr) {
      return k;
    }
    if (k < 0 || (us < 0.013 && v > us)) {
      continue;
    }
    const double kd = static_cast<double>(k);
    if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
        -lambda + kd * loglam - std::lgamma(kd + 1.0)) {
      return k;
    }
  }
}

}  // namespace glmmvb
