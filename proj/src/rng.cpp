#include "cpt/rng.hpp"

#include <cmath>
#include <numbers>

namespace cpt {

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_key(std::initializer_list<std::uint64_t> key) noexcept {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (auto k : key) h = mix64(h ^ mix64(k));
  return h;
}

namespace {

double to_unit_open_closed(std::uint64_t bits) {
  // (0, 1]: safe for log().
  return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

double box_muller(double u1, double u2) {
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

double keyed_normal(std::initializer_list<std::uint64_t> key) noexcept {
  const std::uint64_t h = hash_key(key);
  const std::uint64_t a = mix64(h);
  const std::uint64_t b = mix64(a);
  return box_muller(to_unit_open_closed(a), to_unit_open_closed(b));
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  const double u1 = to_unit_open_closed(engine_());
  const double u2 = to_unit_open_closed(engine_());
  return box_muller(u1, u2);
}

}  // namespace cpt
