// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstring>

#include "henet/common.hpp"

namespace henet {

// ---------------------------------------------------------------------------
// Deterministic ChaCha20-based random stream. Key material comes from a u64
// seed plus a stream id, so independent streams (keys, per-encryption noise,
// per-layer refresh noise) can be derived without coordination. The sequence
// is fixed by the ChaCha20 block function and therefore identical across
// platforms and standard-library implementations.
// ---------------------------------------------------------------------------

class Chacha20Rng {
 public:
  explicit Chacha20Rng(u64 seed, u64 stream = 0) {
    static constexpr std::array<u32, 4> sigma = {0x61707865, 0x3320646e,
                                                 0x79622d32, 0x6b206574};
    state_[0] = sigma[0];
    state_[1] = sigma[1];
    state_[2] = sigma[2];
    state_[3] = sigma[3];
    // 256-bit key = seed/stream words mixed with fixed offsets.
    state_[4] = static_cast<u32>(seed);
    state_[5] = static_cast<u32>(seed >> 32);
    state_[6] = static_cast<u32>(stream);
    state_[7] = static_cast<u32>(stream >> 32);
    state_[8] = static_cast<u32>(seed ^ 0x9e3779b97f4a7c15ULL);
    state_[9] = static_cast<u32>((seed ^ 0x9e3779b97f4a7c15ULL) >> 32);
    state_[10] = static_cast<u32>(stream ^ 0xbf58476d1ce4e5b9ULL);
    state_[11] = static_cast<u32>((stream ^ 0xbf58476d1ce4e5b9ULL) >> 32);
    state_[12] = 0;  // block counter
    state_[13] = 0;
    state_[14] = 0x68650000u;  // nonce, fixed
    state_[15] = 0;
    refill();
  }

  u64 next_u64() {
    if (pos_ + 2 > 16) refill();
    u64 lo = block_[pos_];
    u64 hi = block_[pos_ + 1];
    pos_ += 2;
    return lo | (hi << 32);
  }

  /// Uniform double in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform value in [0, bound) by rejection, bias-free.
  u64 next_below(u64 bound) {
    u64 threshold = (0 - bound) % bound;
    for (;;) {
      u64 r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

 private:
  static u32 rotl(u32 x, int n) { return (x << n) | (x >> (32 - n)); }

  static void quarter_round(u32& a, u32& b, u32& c, u32& d) {
    a += b; d ^= a; d = rotl(d, 16);
    c += d; b ^= c; b = rotl(b, 12);
    a += b; d ^= a; d = rotl(d, 8);
    c += d; b ^= c; b = rotl(b, 7);
  }

  void refill() {
    std::array<u32, 16> x = state_;
    for (int round = 0; round < 10; ++round) {
      quarter_round(x[0], x[4], x[8], x[12]);
      quarter_round(x[1], x[5], x[9], x[13]);
      quarter_round(x[2], x[6], x[10], x[14]);
      quarter_round(x[3], x[7], x[11], x[15]);
      quarter_round(x[0], x[5], x[10], x[15]);
      quarter_round(x[1], x[6], x[11], x[12]);
      quarter_round(x[2], x[7], x[8], x[13]);
      quarter_round(x[3], x[4], x[9], x[14]);
    }
    for (int i = 0; i < 16; ++i) block_[i] = x[i] + state_[i];
    if (++state_[12] == 0) ++state_[13];
    pos_ = 0;
  }

  std::array<u32, 16> state_{};
  std::array<u32, 16> block_{};
  int pos_ = 0;
};

/// Derives a child seed; used to give every encryption site its own stream.
inline u64 derive_seed(u64 seed, u64 tag) {
  u64 z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Uniform ternary secret coefficient in {-1, 0, 1}, mapped onto i64.
inline i64 sample_ternary(Chacha20Rng& rng) {
  return static_cast<i64>(rng.next_below(3)) - 1;
}

/// Centered rounded Gaussian, the conventional RLWE error distribution.
inline i64 sample_gaussian(Chacha20Rng& rng, double sigma) {
  // Box-Muller on explicit uniform draws keeps the stream portable.
  double u1 = rng.next_double();
  double u2 = rng.next_double();
  while (u1 <= 0.0) u1 = rng.next_double();
  double g = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  double v = g * sigma;
  double cap = 6.0 * sigma;
  if (v > cap) v = cap;
  if (v < -cap) v = -cap;
  return static_cast<i64>(std::llround(v));
}

constexpr double kNoiseStdDev = 3.2;

}  // namespace henet
