#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace sieve {

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// FNV-1a over raw bytes. Used for pair ids, cache keys and PRNG seeding, so
/// the value must never depend on platform or locale.
constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = kFnvOffsetBasis;
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= kFnvPrime;
  }
  return h;
}

/// Lowercase, zero-padded 16-character hex.
std::string hex16(std::uint64_t value);

/// Parses exactly 16 hex digits (either case). Returns false on anything else.
bool parse_hex16(std::string_view text, std::uint64_t& out) noexcept;

class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Top 53 bits mapped to [-1, 1).
  double next_signed_unit() noexcept {
    const double u = static_cast<double>(next() >> 11) * 0x1.0p-53;
    return 2.0 * u - 1.0;
  }

 private:
  std::uint64_t state_;
};

}  // namespace sieve
