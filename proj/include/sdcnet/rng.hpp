#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "sdcnet/error.hpp"

namespace sdcnet {

// Counter-based generator built on the SplitMix64 finalizer.
//
// The i-th draw (i = 1, 2, ...) of a generator with key k is
//
//     mix64(k + i * 0x9E3779B97F4A7C15)
//
// where mix64 is the SplitMix64 output function. The whole state is the
// pair (key, counter), so a generator can be saved, restored, or jumped
// without replaying draws. split(s) derives an independent stream whose key
// is mix64(key ^ mix64(s + 0x632BE59BD9B4E019)); all randomness in the
// library (initialization, shuffling, augmentation) is keyed this way from a
// single user seed.
//
// Derived quantities:
//   uniform()          (u >> 11) * 2^-53, in [0, 1)
//   uniform_int(n)     rejection sampling on u below the largest multiple of n
//   normal(m, s)       Box-Muller on two uniforms, cosine branch only
class Rng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kSplitSalt = 0x632BE59BD9B4E019ULL;

  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0) noexcept
      : key_(seed), counter_(counter) {}

  static constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * kGolden);
  }

  [[nodiscard]] Rng split(std::uint64_t stream) const noexcept {
    return Rng(mix64(key_ ^ mix64(stream + kSplitSalt)), 0);
  }

  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw InvalidArgument("uniform_int: empty range");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t u = next_u64();
    while (u >= limit) u = next_u64();
    return u % n;
  }

  double normal(double mean, double stddev) {
    if (stddev < 0.0) throw InvalidArgument("normal: negative stddev");
    // 1 - uniform() lies in (0, 1], so the log is finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    return mean + stddev * z;
  }

  [[nodiscard]] std::uint64_t key() const noexcept { return key_; }
  [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace sdcnet
