#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace ergodiff {

/// Counter-based Philox4x32-10 generator (Salmon et al., SC'11).
///
/// The key is the user seed and the upper half of the counter is a stream
/// id, so every (seed, stream) pair addresses an independent sequence
/// without any shared state. Satisfies UniformRandomBitGenerator with
/// 64-bit output (two per Philox block).
class Philox4x32
{
public:
  using result_type = std::uint64_t;

  Philox4x32(std::uint64_t seed, std::uint64_t stream)
    : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
      stream_(stream)
  {
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()()
  {
    if (used_ == 2) {
      refill();
    }
    const auto lo = static_cast<std::uint64_t>(buffer_[2 * used_]);
    const auto hi = static_cast<std::uint64_t>(buffer_[2 * used_ + 1]);
    ++used_;
    return lo | (hi << 32);
  }

  std::uint64_t stream() const { return stream_; }

  /// One raw block, exposed for known-answer tests.
  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                            std::array<std::uint32_t, 2> key)
  {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }

private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  void refill()
  {
    const std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(counter_),
                                           static_cast<std::uint32_t>(counter_ >> 32),
                                           static_cast<std::uint32_t>(stream_),
                                           static_cast<std::uint32_t>(stream_ >> 32)};
    buffer_ = block(ctr, key_);
    ++counter_;
    used_ = 0;
  }

  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 2;
};

/// Independent roles drawing randomness inside one replicate. Streams for
/// different roles never overlap, so e.g. the coupling noise ε is
/// independent of the path noise by construction.
enum class StreamRole : std::uint64_t
{
  path = 1,
  coupling_noise = 2,
  regression_noise = 3,
  sheet = 4,
  shift_noise = 5,
  auxiliary = 6,
};

inline std::uint64_t stream_id(std::uint64_t replicate, StreamRole role)
{
  return (static_cast<std::uint64_t>(role) << 48) ^ replicate;
}

inline Philox4x32 make_stream(std::uint64_t seed, std::uint64_t replicate, StreamRole role)
{
  return Philox4x32(seed, stream_id(replicate, role));
}

} // namespace ergodiff
