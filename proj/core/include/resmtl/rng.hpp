#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>

namespace resmtl {

class Matrix;

/// xoshiro256** seeded through splitmix64.
///
/// Every draw is produced from integer arithmetic owned by this class, so a
/// seed yields the same stream regardless of the standard library in use.
/// Normal variates use the Marsaglia polar method.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;
  result_type operator()() noexcept { return next_u64(); }
  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform01() noexcept;
  /// Unbiased uniform integer in [0, bound). bound must be > 0.
  std::uint64_t uniform_index(std::uint64_t bound) noexcept;
  double normal(double mean = 0.0, double stddev = 1.0) noexcept;

  /// Fisher-Yates shuffle of any random-access range.
  template <typename It>
  void shuffle(It first, It last) noexcept {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = uniform_index(i);
      using std::swap;
      swap(first[static_cast<std::ptrdiff_t>(i - 1)], first[static_cast<std::ptrdiff_t>(j)]);
    }
  }

  /// Independent child stream; deterministic in (parent state, stream id).
  Rng fork(std::uint64_t stream_id) noexcept;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// He-normal initialization: N(0, sqrt(2 / rows)).
Matrix he_init(std::size_t rows, std::size_t cols, Rng& rng);

/// Inverted-dropout mask: 0 with probability `rate`, else 1 / (1 - rate).
Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng);

}  // namespace resmtl
