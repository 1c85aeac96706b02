#include "idforge/rng.hpp"

#include <cmath>
#include <numbers>

namespace idforge {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                           std::array<std::uint32_t, 2> key) noexcept {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

RngState RngState::derive(std::uint64_t sub) const noexcept {
  return RngState{seed, splitmix64(stream ^ splitmix64(sub ^ 0x5DEECE66Dull))};
}

std::uint64_t RngState::u64_at(std::uint64_t index) const noexcept {
  const std::uint64_t block = index >> 1;
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed),
                                            static_cast<std::uint32_t>(seed >> 32)};
  const auto out = philox4x32_10(ctr, key);
  const std::size_t half = (index & 1u) * 2;
  return (static_cast<std::uint64_t>(out[half + 1]) << 32) | out[half];
}

double RngState::uniform_at(std::uint64_t index) const noexcept {
  return static_cast<double>(u64_at(index) >> 11) * 0x1.0p-53;
}

double RngState::normal_at(std::uint64_t index) const noexcept {
  // u1 in (0, 1] keeps the log finite.
  const double u1 = static_cast<double>((u64_at(2 * index) >> 11) + 1) * 0x1.0p-53;
  const double u2 = uniform_at(2 * index + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngCursor::normal() noexcept {
  // Normal draws occupy even-aligned pairs so they stay addressable by index.
  if (position_ & 1u) ++position_;
  const double z = state_.normal_at(position_ / 2);
  position_ += 2;
  return z;
}

std::uint64_t RngCursor::uniform_index(std::uint64_t bound) noexcept {
  // Lemire's multiply-shift with rejection.
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t x = next_u64();
    const unsigned __int128 m = static_cast<unsigned __int128>(x) * bound;
    if (static_cast<std::uint64_t>(m) >= threshold) {
      return static_cast<std::uint64_t>(m >> 64);
    }
  }
}

}  // namespace idforge
