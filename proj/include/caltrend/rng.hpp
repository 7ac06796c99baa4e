#pragma once

#include <cmath>
#include <cstdint>

namespace caltrend {

namespace detail {

// SplitMix64 finalizer. Used both as a stream combiner and as the
// generator step, so every draw is a pure function of (seed, counter).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Combine a seed with stream identifiers to derive an independent substream
/// seed. Deterministic and order-sensitive: mix(s, a, b) != mix(s, b, a).
inline std::uint64_t mix_seed(std::uint64_t seed) { return detail::splitmix64(seed); }

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t head, Rest... rest) {
  return mix_seed(detail::splitmix64(seed ^ detail::splitmix64(head)), rest...);
}

// Stream tags for the substreams derived from one master seed. Fold
// assignment, learner bootstraps, data generation and bootstrap resampling
// draw from separate streams so changing one never perturbs another.
namespace streams {
inline constexpr std::uint64_t kFoldSplit = 0x01;
inline constexpr std::uint64_t kLearner = 0x02;
inline constexpr std::uint64_t kGenerate = 0x03;
inline constexpr std::uint64_t kBootstrap = 0x04;
inline constexpr std::uint64_t kPool = 0x05;
inline constexpr std::uint64_t kSelection = 0x06;
inline constexpr std::uint64_t kReplicate = 0x07;
}  // namespace streams

/// Small deterministic RNG with explicit distribution algorithms.
/// Not std::<random> distributions: those are implementation-defined, and
/// artifact byte-identity across builds requires pinning the exact math.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(detail::splitmix64(seed ^ 0xd1b54a32d192ed03ULL)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  /// Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) {
    // Multiply-shift rejection-free map; bias is negligible for n << 2^64.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one value per call; pairs not cached so
  /// draw counts stay easy to reason about).
  double normal() {
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

 private:
  std::uint64_t state_;
};

/// Random-access standard normal: a pure function of (seed, counter pair).
/// Lets bootstrap code regenerate any z vector without storing it.
inline double counter_normal(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  const std::uint64_t h1 = detail::splitmix64(mix_seed(seed, a, b) ^ 0x2545f4914f6cdd1dULL);
  const std::uint64_t h2 = detail::splitmix64(h1);
  double u1 = static_cast<double>(h1 >> 11) * 0x1.0p-53;
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double u2 = static_cast<double>(h2 >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace caltrend
