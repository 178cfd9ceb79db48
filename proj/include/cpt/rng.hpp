#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cpt {

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Folds a key tuple into a single 64-bit seed. Order-sensitive.
std::uint64_t hash_key(std::initializer_list<std::uint64_t> key) noexcept;

/// Standard normal draw that depends only on `key` (counter-based, no stream state).
double keyed_normal(std::initializer_list<std::uint64_t> key) noexcept;

/// Sequential stream over mt19937_64. The uniform/normal mappings are written
/// out here instead of using <random> distributions, whose output is
/// implementation-defined; frozen test values must not depend on the stdlib.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::initializer_list<std::uint64_t> key) : engine_(hash_key(key)) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
};

/// Domain-separation tags for the independent streams used across modules.
namespace stream {
inline constexpr std::uint64_t kPoolInit = 0x706f6f6c;      // "pool"
inline constexpr std::uint64_t kCaption = 0x63617074;       // "capt"
inline constexpr std::uint64_t kAnchorShared = 0x616e6367;  // "ancg"
inline constexpr std::uint64_t kAnchorDelta = 0x616e6364;   // "ancd"
inline constexpr std::uint64_t kEncodeCaption = 0x656e6363;
inline constexpr std::uint64_t kEncodeTest = 0x656e6374;
inline constexpr std::uint64_t kShuffle = 0x73687566;
}  // namespace stream

}  // namespace cpt
