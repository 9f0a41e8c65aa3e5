#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>

namespace gpmax {

// Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy as 1, 2,
// 3", SC'11). A stream is identified by a 64-bit key (the seed) and the upper
// 64 bits of the 128-bit counter (the stream id); the lower 64 bits count
// blocks within the stream. Distinct (seed, stream) pairs therefore never
// share a counter block, which is what makes per-replicate streams
// non-overlapping.
class Philox4x32 {
 public:
  using result_type = std::uint32_t;

  Philox4x32(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    if (pos_ == 4) refill();
    return buffer_[pos_++];
  }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t hi = (*this)();
    return (hi << 32) | (*this)();
  }

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal by the Box-Muller transform; values come in pairs.
  double normal() noexcept;

  /// Jump to block `block` of the stream (each block yields 4 words).
  void seek(std::uint64_t block) noexcept {
    block_ = block;
    pos_ = 4;
    has_spare_ = false;
  }

  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> counter,
                                            std::array<std::uint32_t, 2> key) noexcept;

 private:
  void refill() noexcept;

  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int pos_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Fills `out` with standard normals taken from consecutive counter blocks
/// starting at `first_block`; each block yields two values. The value at
/// position i depends only on (seed, stream, first_block + i / 2), so callers
/// can address coefficients by index independently of how many they draw.
void fill_normals(std::uint64_t seed, std::uint64_t stream, std::uint64_t first_block,
                  std::span<double> out) noexcept;

/// Mixes a path of integers (replicate index, cell index, purpose tag...)
/// into a stream id with splitmix64. Used so that every consumer of
/// randomness derives its stream from the master seed alone.
std::uint64_t derive_stream(std::initializer_list<std::uint64_t> path) noexcept;

/// Derives a fresh 64-bit seed for a child computation.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) noexcept;

}  // namespace gpmax
