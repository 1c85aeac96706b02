#pragma once

#include <array>
#include <cstdint>

namespace idforge {

/// Counter-based random source (Philox4x32-10). Every draw is a pure function
/// of (seed, stream, index), so parallel workers can address any position of
/// a stream without sharing state.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  /// Child stream keyed by `sub` (identity index, stage tag, ...).
  RngState derive(std::uint64_t sub) const noexcept;

  std::uint64_t u64_at(std::uint64_t index) const noexcept;
  /// Uniform in [0, 1).
  double uniform_at(std::uint64_t index) const noexcept;
  /// Standard normal by Box-Muller; consumes u64 positions 2*index and 2*index+1.
  double normal_at(std::uint64_t index) const noexcept;

  friend bool operator==(const RngState&, const RngState&) = default;
};

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key) noexcept;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Sequential cursor over one stream, for code that consumes draws in order.
class RngCursor {
 public:
  explicit RngCursor(RngState state, std::uint64_t position = 0) noexcept
      : state_(state), position_(position) {}

  std::uint64_t next_u64() noexcept { return state_.u64_at(position_++); }
  double uniform() noexcept { return state_.uniform_at(position_++); }
  double normal() noexcept;
  /// Unbiased integer in [0, bound); bound must be > 0.
  std::uint64_t uniform_index(std::uint64_t bound) noexcept;

  std::uint64_t position() const noexcept { return position_; }
  const RngState& state() const noexcept { return state_; }

 private:
  RngState state_;
  std::uint64_t position_;
};

}  // namespace idforge
