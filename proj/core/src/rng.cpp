#include "tdamc/rng.hpp"

namespace tdamc {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t hash_tag(std::string_view tag) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return mix64(h);
}

SeedStream SeedStream::derive(std::string_view tag) const noexcept {
  return SeedStream(mix64(key_ ^ mix64(hash_tag(tag) + kGolden)));
}

SeedStream SeedStream::derive(std::uint64_t index) const noexcept {
  return SeedStream(mix64(key_ ^ mix64(mix64(index) + 2 * kGolden + 1)));
}

std::uint64_t SeedStream::next_u64() noexcept {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double SeedStream::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t SeedStream::uniform_int(std::uint64_t n) noexcept {
  // Rejection to avoid modulo bias.
  const std::uint64_t limit = max() - max() % n;
  std::uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return r % n;
}

}  // namespace tdamc
