#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace gatescale {

/// xoshiro256** seeded through SplitMix64 from (seed, stream).
///
/// Streams give independent sequences for the same seed, so that e.g. bucket
/// noise and CMA-ES candidate noise never share draws. Outputs depend only on
/// integer arithmetic plus std::log/std::sqrt/std::cos in `normal()`.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "xoshiro256**/splitmix64";

  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal (Box-Muller, the spare value is cached).
  double normal() noexcept;

  /// A generator on a derived stream; does not advance this one.
  Rng split(std::uint64_t substream) const noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Stable 64-bit mix of two words (SplitMix64 finaliser over a ^ rot(b)).
std::uint64_t mix64(std::uint64_t a, std::uint64_t b) noexcept;

}  // namespace gatescale
