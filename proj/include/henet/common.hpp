// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace henet {

using u8 = std::uint8_t;
using u16 = std::uint16_t;
using u32 = std::uint32_t;
using u64 = std::uint64_t;
using i64 = std::int64_t;
using u128 = unsigned __int128;
using i128 = __int128;

/// Input failed a contract check (bad parameters, mismatched shapes, ...).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Network / framing failure in the two-party protocol.
class TransportError : public std::runtime_error {
 public:
  explicit TransportError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const char* what) {
  if (!cond) throw ValidationError(what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ValidationError(what);
}

// ---------------------------------------------------------------------------
// Word-level helpers. 128-bit intermediates are carried as (low, high) word
// pairs; add64 returns the carry bit, matching the usual mulx/adc idiom.
// ---------------------------------------------------------------------------

/// sum = a + b, returns the carry-out bit.
inline u64 add64(u64 a, u64 b, u64* sum) {
  *sum = a + b;
  return static_cast<u64>(*sum < a);
}

/// Full 64x64 -> 128-bit product as (low, high) words.
inline void mul64_wide(u64 a, u64 b, u64* lo, u64* hi) {
  u128 z = static_cast<u128>(a) * b;
  *lo = static_cast<u64>(z);
  *hi = static_cast<u64>(z >> 64);
}

/// High 64 bits of a 64x64 product.
inline u64 mul_hw64(u64 a, u64 b) {
  return static_cast<u64>((static_cast<u128>(a) * b) >> 64);
}

constexpr bool is_power_of_two(u64 x) { return x != 0 && (x & (x - 1)) == 0; }

inline u32 log2_exact(u64 x) {
  u32 log = 0;
  while ((u64{1} << log) < x) ++log;
  if ((u64{1} << log) != x) throw ValidationError("log2_exact: not a power of two");
  return log;
}

// ---------------------------------------------------------------------------
// Little-endian byte packing for the wire format.
// ---------------------------------------------------------------------------

inline void put_u8(std::vector<u8>& out, u8 v) { out.push_back(v); }

inline void put_u32(std::vector<u8>& out, u32 v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<u8>(v >> (8 * i)));
}

inline void put_u64(std::vector<u8>& out, u64 v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<u8>(v >> (8 * i)));
}

class ByteReader {
 public:
  ByteReader(const u8* data, std::size_t size) : data_(data), size_(size) {}
  explicit ByteReader(const std::vector<u8>& bytes) : ByteReader(bytes.data(), bytes.size()) {}

  u8 get_u8() { return take(1)[0]; }

  u32 get_u32() {
    const u8* p = take(4);
    u32 v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }

  u64 get_u64() {
    const u8* p = take(8);
    u64 v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }

  const u8* take(std::size_t n) {
    if (pos_ + n > size_) throw ValidationError("serialized data truncated");
    const u8* p = data_ + pos_;
    pos_ += n;
    return p;
  }

  std::size_t remaining() const { return size_ - pos_; }

 private:
  const u8* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Data-parallel loop over [0, count). Workers claim disjoint indices, so the
// body may write to per-index output slots without synchronization.
// ---------------------------------------------------------------------------

template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& body) {
  if (count == 0) return;
  if (threads <= 1 || count == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      body(i);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

}  // namespace henet
