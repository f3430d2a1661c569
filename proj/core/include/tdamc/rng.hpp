#pragma once

#include <cstdint>
#include <string_view>

namespace tdamc {

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Stable 64-bit hash of a tag (FNV-1a followed by mix64).
std::uint64_t hash_tag(std::string_view tag) noexcept;

/// Counter-based random stream.
///
/// A stream is identified by a 64-bit key; the i-th draw is a pure function
/// of (key, i). Child streams are derived from a parent key and a tag, so
/// every (stage, replicate, unit, group) gets its own substream no matter
/// which thread or in what order it is consumed.
class SeedStream {
 public:
  using result_type = std::uint64_t;

  explicit SeedStream(std::uint64_t key = 0) noexcept : key_(key) {}

  [[nodiscard]] SeedStream derive(std::string_view tag) const noexcept;
  [[nodiscard]] SeedStream derive(std::uint64_t index) const noexcept;

  std::uint64_t next_u64() noexcept;
  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  // Uniform on {0, ..., n-1}; n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }
  result_type operator()() noexcept { return next_u64(); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace tdamc
