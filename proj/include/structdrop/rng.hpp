#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "structdrop/matrix.hpp"

namespace structdrop {

/// xoshiro256** generator whose state is expanded from (seed, stream_id)
/// with splitmix64. Streams with different ids are statistically
/// independent; a generator is single-owner state and must not be shared
/// between threads.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed, std::uint64_t stream_id = 0) : seed_(seed), stream_id_(stream_id) {
    std::uint64_t sm = seed;
    // Fold the stream id in through one splitmix round so that nearby
    // (seed, stream) pairs do not produce overlapping expansions.
    std::uint64_t mix = stream_id + 0x632BE59BD9B4E019ULL;
    sm ^= splitmix64(mix);
    for (auto& s : state_) s = splitmix64(sm);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// True with probability p. p >= 1 always succeeds.
  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Standard normal by Box-Muller; the second variate of each pair is cached.
  double normal() noexcept {
    if (cached_) {
      const double z = *cached_;
      cached_.reset();
      return z;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_ = radius * std::sin(angle);
    return radius * std::cos(angle);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

  static std::uint64_t splitmix64(std::uint64_t& x) noexcept {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::array<std::uint64_t, 4> state_{};
  std::optional<double> cached_;
};

/// rows x cols matrix of i.i.d. N(0, 1) entries drawn row-major from rng.
inline Matrix gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw DimensionError("gaussian_matrix: dimensions must be positive");
  std::vector<double> d(rows * cols);
  for (double& v : d) v = rng.normal();
  return Matrix(rows, cols, std::move(d));
}

}  // namespace structdrop
