// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "henet/common.hpp"

namespace henet {

// ---------------------------------------------------------------------------
// PrimeModulus: a word-sized NTT-friendly prime with precomputed Barrett
// ratios floor(2^128/q) (as a low/high word pair) and floor(2^64/q).
// ---------------------------------------------------------------------------

namespace detail {

inline u64 mod_pow_u128(u64 base, u64 exp, u64 mod) {
  u64 result = 1 % mod;
  u64 b = base % mod;
  while (exp != 0) {
    if (exp & 1) result = static_cast<u64>(static_cast<u128>(result) * b % mod);
    b = static_cast<u64>(static_cast<u128>(b) * b % mod);
    exp >>= 1;
  }
  return result;
}

inline bool is_prime(u64 n) {
  if (n < 2) return false;
  for (u64 p : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull, 29ull, 31ull, 37ull}) {
    if (n % p == 0) return n == p;
  }
  u64 d = n - 1;
  int r = 0;
  while ((d & 1) == 0) {
    d >>= 1;
    ++r;
  }
  // Deterministic Miller-Rabin base set for 64-bit integers.
  for (u64 a : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull, 29ull, 31ull, 37ull}) {
    u64 x = mod_pow_u128(a, d, n);
    if (x == 1 || x == n - 1) continue;
    bool witness = true;
    for (int i = 1; i < r; ++i) {
      x = static_cast<u64>(static_cast<u128>(x) * x % n);
      if (x == n - 1) {
        witness = false;
        break;
      }
    }
    if (witness) return false;
  }
  return true;
}

inline u64 pollard_rho(u64 n) {
  if ((n & 1) == 0) return 2;
  for (u64 c = 1;; ++c) {
    auto step = [&](u64 x) {
      return static_cast<u64>((static_cast<u128>(x) * x + c) % n);
    };
    u64 x = 2, y = 2, d = 1;
    while (d == 1) {
      x = step(x);
      y = step(step(y));
      u64 diff = x > y ? x - y : y - x;
      d = std::gcd(diff, n);
    }
    if (d != n) return d;
  }
}

inline void factorize(u64 n, std::vector<u64>& primes) {
  if (n == 1) return;
  if (is_prime(n)) {
    if (std::find(primes.begin(), primes.end(), n) == primes.end()) primes.push_back(n);
    return;
  }
  u64 d = pollard_rho(n);
  factorize(d, primes);
  factorize(n / d, primes);
}

}  // namespace detail

struct PrimeModulus {
  u64 value = 0;
  int bit_width = 0;
  u64 barrett_ratio_128_lo = 0;  // floor(2^128 / value), low word
  u64 barrett_ratio_128_hi = 0;  // floor(2^128 / value), high word
  u64 barrett_ratio_64 = 0;      // floor(2^64 / value)
  u64 ntt_root = 0;              // primitive 2N-th root, set per context

  PrimeModulus() = default;

  explicit PrimeModulus(u64 q) : value(q) {
    require(q >= 2, "modulus must be at least 2");
    bit_width = 64 - __builtin_clzll(q);
    require(bit_width <= 62, "modulus wider than 62 bits");
    require(detail::is_prime(q), "modulus must be prime");
    // floor(2^128/q) = d1*2^64 + floor(r1*2^64/q) with d1 = floor(2^64/q).
    u64 d1 = static_cast<u64>((static_cast<u128>(1) << 64) / q);
    u64 r1 = static_cast<u64>((static_cast<u128>(1) << 64) % q);
    barrett_ratio_128_hi = d1;
    barrett_ratio_128_lo = static_cast<u64>((static_cast<u128>(r1) << 64) / q);
    barrett_ratio_64 = d1;
  }

  bool operator==(const PrimeModulus& other) const { return value == other.value; }
};

// ---------------------------------------------------------------------------
// Barrett reduction, 128-bit and 64-bit variants. The 128-bit form works on
// an explicit (low, high) word pair and uses a single conditional subtraction.
// ---------------------------------------------------------------------------

inline u64 barrett_reduce_128(u64 z_lo, u64 z_hi, const PrimeModulus& q) {
  u64 tmp1, tmp3, carry;
  u64 prod_lo, prod_hi;
  const u64 r0 = q.barrett_ratio_128_lo;
  const u64 r1 = q.barrett_ratio_128_hi;

  carry = mul_hw64(z_lo, r0);
  mul64_wide(z_lo, r1, &prod_lo, &prod_hi);
  tmp3 = prod_hi + add64(prod_lo, carry, &tmp1);
  mul64_wide(z_hi, r0, &prod_lo, &prod_hi);
  carry = prod_hi + add64(tmp1, prod_lo, &tmp1);
  tmp1 = z_hi * r1 + tmp3 + carry;  // low word of floor(z*r / 2^128)
  tmp3 = z_lo - tmp1 * q.value;     // Barrett subtraction
  return tmp3 >= q.value ? tmp3 - q.value : tmp3;
}

inline u64 barrett_reduce_128(u128 z, const PrimeModulus& q) {
  return barrett_reduce_128(static_cast<u64>(z), static_cast<u64>(z >> 64), q);
}

inline u64 barrett_reduce_64(u64 z, const PrimeModulus& q) {
  require(q.bit_width <= 32, "barrett_reduce_64 requires a modulus of at most 32 bits");
  u64 carry = mul_hw64(z, q.barrett_ratio_64);
  carry = z - carry * q.value;
  return carry >= q.value ? carry - q.value : carry;
}

inline u64 mod_add(u64 a, u64 b, const PrimeModulus& q) {
  u64 s = a + b;
  return s >= q.value ? s - q.value : s;
}

inline u64 mod_sub(u64 a, u64 b, const PrimeModulus& q) {
  return a >= b ? a - b : a + q.value - b;
}

inline u64 mod_neg(u64 a, const PrimeModulus& q) { return a == 0 ? 0 : q.value - a; }

inline u64 mod_mul(u64 a, u64 b, const PrimeModulus& q) {
  if (q.bit_width <= 32) return barrett_reduce_64(a * b, q);
  u64 lo, hi;
  mul64_wide(a, b, &lo, &hi);
  return barrett_reduce_128(lo, hi, q);
}

inline u64 mod_pow(u64 base, u64 exp, const PrimeModulus& q) {
  u64 result = 1 % q.value;
  u64 b = base % q.value;
  while (exp != 0) {
    if (exp & 1) result = mod_mul(result, b, q);
    b = mod_mul(b, b, q);
    exp >>= 1;
  }
  return result;
}

inline u64 mod_inv(u64 a, const PrimeModulus& q) {
  require(a % q.value != 0, "no inverse of zero");
  return mod_pow(a, q.value - 2, q);
}

/// Reduces a signed integer into [0, q).
inline u64 mod_from_signed(i64 v, const PrimeModulus& q) {
  i64 r = v % static_cast<i64>(q.value);
  if (r < 0) r += static_cast<i64>(q.value);
  return static_cast<u64>(r);
}

// ---------------------------------------------------------------------------
// Primitive 2N-th root of unity mod q (q = 1 mod 2N required). Deterministic:
// smallest generator is used, so preset tables are stable across runs.
// ---------------------------------------------------------------------------

inline u64 find_ntt_root(const PrimeModulus& q, u32 degree) {
  require(is_power_of_two(degree), "degree must be a power of two");
  const u64 order = 2ull * degree;
  if ((q.value - 1) % order != 0) {
    throw ValidationError("modulus admits no 2N-th root of unity (q != 1 mod 2N)");
  }
  std::vector<u64> factors;
  detail::factorize(q.value - 1, factors);
  u64 generator = 0;
  for (u64 g = 2; g < q.value; ++g) {
    bool primitive = true;
    for (u64 f : factors) {
      if (mod_pow(g, (q.value - 1) / f, q) == 1) {
        primitive = false;
        break;
      }
    }
    if (primitive) {
      generator = g;
      break;
    }
  }
  u64 root = mod_pow(generator, (q.value - 1) / order, q);
  // Order check: root^N = -1 and root^2N = 1.
  require(mod_pow(root, degree, q) == q.value - 1, "root order check failed");
  require(mod_pow(root, order, q) == 1, "root order check failed");
  return root;
}

// ---------------------------------------------------------------------------
// RNS basis: the ordered modulus chain q_l = p_1 * ... * p_l plus an optional
// key-switching prime.
// ---------------------------------------------------------------------------

struct RnsBasis {
  std::vector<PrimeModulus> moduli;
  std::optional<PrimeModulus> special;

  RnsBasis() = default;

  RnsBasis(std::vector<PrimeModulus> chain, std::optional<PrimeModulus> sp)
      : moduli(std::move(chain)), special(std::move(sp)) {
    for (std::size_t i = 0; i < moduli.size(); ++i) {
      for (std::size_t j = i + 1; j < moduli.size(); ++j) {
        require(moduli[i].value != moduli[j].value, "chain moduli must be pairwise distinct");
      }
      if (special) {
        require(moduli[i].value != special->value, "special prime must differ from the chain");
      }
    }
  }

  std::size_t chain_length() const { return moduli.size(); }
};

// ---------------------------------------------------------------------------
// RingElement: a polynomial in R_{q_l}, stored one residue array per chain
// modulus (flat, modulus-major) and flagged with its representation domain.
// ---------------------------------------------------------------------------

enum class PolyDomain : u8 { Coefficient = 0, Ntt = 1 };

class RingElement {
 public:
  RingElement() = default;

  RingElement(u32 degree, std::size_t level, PolyDomain domain)
      : degree_(degree), domain_(domain), data_(static_cast<std::size_t>(degree) * level, 0) {
    require(is_power_of_two(degree), "degree must be a power of two");
    require(level >= 1, "level must be at least 1");
  }

  u32 degree() const { return degree_; }
  std::size_t level() const { return degree_ == 0 ? 0 : data_.size() / degree_; }
  PolyDomain domain() const { return domain_; }
  void set_domain(PolyDomain d) { domain_ = d; }

  std::span<u64> limb(std::size_t i) {
    return {data_.data() + i * degree_, degree_};
  }
  std::span<const u64> limb(std::size_t i) const {
    return {data_.data() + i * degree_, degree_};
  }

  std::vector<u64>& words() { return data_; }
  const std::vector<u64>& words() const { return data_; }

  /// Drops the highest limb(s), keeping the first `new_level`.
  void truncate_level(std::size_t new_level) {
    require(new_level >= 1 && new_level <= level(), "bad truncation level");
    data_.resize(new_level * degree_);
  }

  bool operator==(const RingElement& o) const {
    return degree_ == o.degree_ && domain_ == o.domain_ && data_ == o.data_;
  }

 private:
  u32 degree_ = 0;
  PolyDomain domain_ = PolyDomain::Coefficient;
  std::vector<u64> data_;
};

// ---------------------------------------------------------------------------
// Negacyclic NTT. Iterative Cooley-Tukey forward / Gentleman-Sande inverse
// with the psi powers stored in bit-reversed order.
// ---------------------------------------------------------------------------

struct NttTables {
  PrimeModulus modulus;
  u32 degree = 0;
  std::vector<u64> root_powers;      // psi^bitrev(i)
  std::vector<u64> inv_root_powers;  // psi^-bitrev(i)
  u64 degree_inv = 0;                // N^-1 mod q

  NttTables() = default;

  NttTables(const PrimeModulus& q, u32 n) : modulus(q), degree(n) {
    u64 psi = q.ntt_root != 0 ? q.ntt_root : find_ntt_root(q, n);
    modulus.ntt_root = psi;
    u64 psi_inv = mod_inv(psi, q);
    u32 log_n = log2_exact(n);
    root_powers.resize(n);
    inv_root_powers.resize(n);
    for (u32 i = 0; i < n; ++i) {
      u32 rev = bit_reverse(i, log_n);
      root_powers[i] = mod_pow(psi, rev, q);
      inv_root_powers[i] = mod_pow(psi_inv, rev, q);
    }
    degree_inv = mod_inv(n % q.value, q);
  }

  static u32 bit_reverse(u32 v, u32 bits) {
    u32 r = 0;
    for (u32 i = 0; i < bits; ++i) {
      r = (r << 1) | ((v >> i) & 1);
    }
    return r;
  }
};

namespace detail {

inline void ntt_forward_limb(std::span<u64> a, const NttTables& tables) {
  const PrimeModulus& q = tables.modulus;
  const u32 n = tables.degree;
  u32 t = n;
  for (u32 m = 1; m < n; m <<= 1) {
    t >>= 1;
    for (u32 i = 0; i < m; ++i) {
      const u64 w = tables.root_powers[m + i];
      const u32 j1 = 2 * i * t;
      for (u32 j = j1; j < j1 + t; ++j) {
        u64 u = a[j];
        u64 v = mod_mul(a[j + t], w, q);
        a[j] = mod_add(u, v, q);
        a[j + t] = mod_sub(u, v, q);
      }
    }
  }
}

inline void ntt_inverse_limb(std::span<u64> a, const NttTables& tables) {
  const PrimeModulus& q = tables.modulus;
  const u32 n = tables.degree;
  // Forward stages unwound in reverse with inverted twiddles; the per-stage
  // halving is collected into a single multiply by N^-1.
  u32 t = 1;
  for (u32 m = n >> 1; m >= 1; m >>= 1) {
    for (u32 i = 0; i < m; ++i) {
      const u64 w = tables.inv_root_powers[m + i];
      const u32 j1 = 2 * i * t;
      for (u32 j = j1; j < j1 + t; ++j) {
        u64 u = a[j];
        u64 v = a[j + t];
        a[j] = mod_add(u, v, q);
        a[j + t] = mod_mul(mod_sub(u, v, q), w, q);
      }
    }
    t <<= 1;
  }
  for (u32 j = 0; j < n; ++j) a[j] = mod_mul(a[j], tables.degree_inv, q);
}

}  // namespace detail

/// In-place negacyclic NTT over every limb; flips the domain flag.
inline void ntt_forward(RingElement& x, std::span<const NttTables> tables) {
  require(x.domain() == PolyDomain::Coefficient, "ntt_forward expects coefficient domain");
  require(tables.size() >= x.level(), "missing NTT tables for level");
  for (std::size_t i = 0; i < x.level(); ++i) {
    detail::ntt_forward_limb(x.limb(i), tables[i]);
  }
  x.set_domain(PolyDomain::Ntt);
}

inline void ntt_inverse(RingElement& x, std::span<const NttTables> tables) {
  require(x.domain() == PolyDomain::Ntt, "ntt_inverse expects NTT domain");
  require(tables.size() >= x.level(), "missing NTT tables for level");
  for (std::size_t i = 0; i < x.level(); ++i) {
    detail::ntt_inverse_limb(x.limb(i), tables[i]);
  }
  x.set_domain(PolyDomain::Coefficient);
}

// ---------------------------------------------------------------------------
// Minimal unsigned wide integer for CRT recomposition at decode time.
// Little-endian 64-bit words; only the operations decode needs.
// ---------------------------------------------------------------------------

namespace detail {

class WideUint {
 public:
  WideUint() : words_(1, 0) {}
  explicit WideUint(u64 v) : words_(1, v) {}

  void mul_small(u64 m) {
    u64 carry = 0;
    for (auto& w : words_) {
      u128 z = static_cast<u128>(w) * m + carry;
      w = static_cast<u64>(z);
      carry = static_cast<u64>(z >> 64);
    }
    if (carry) words_.push_back(carry);
  }

  void add(const WideUint& o) {
    if (o.words_.size() > words_.size()) words_.resize(o.words_.size(), 0);
    u64 carry = 0;
    for (std::size_t i = 0; i < words_.size(); ++i) {
      u64 rhs = i < o.words_.size() ? o.words_[i] : 0;
      u64 s;
      u64 c1 = add64(words_[i], rhs, &s);
      u64 c2 = add64(s, carry, &s);
      words_[i] = s;
      carry = c1 + c2;
    }
    if (carry) words_.push_back(carry);
  }

  /// this -= o; requires this >= o.
  void sub(const WideUint& o) {
    u64 borrow = 0;
    for (std::size_t i = 0; i < words_.size(); ++i) {
      u64 rhs = (i < o.words_.size() ? o.words_[i] : 0);
      u128 lhs = words_[i];
      u128 need = static_cast<u128>(rhs) + borrow;
      if (lhs >= need) {
        words_[i] = static_cast<u64>(lhs - need);
        borrow = 0;
      } else {
        words_[i] = static_cast<u64>((static_cast<u128>(1) << 64) + lhs - need);
        borrow = 1;
      }
    }
    trim();
  }

  int compare(const WideUint& o) const {
    std::size_t n = std::max(words_.size(), o.words_.size());
    for (std::size_t i = n; i-- > 0;) {
      u64 a = i < words_.size() ? words_[i] : 0;
      u64 b = i < o.words_.size() ? o.words_[i] : 0;
      if (a != b) return a < b ? -1 : 1;
    }
    return 0;
  }

  void shift_right_one() {
    for (std::size_t i = 0; i < words_.size(); ++i) {
      u64 next = (i + 1 < words_.size()) ? words_[i + 1] : 0;
      words_[i] = (words_[i] >> 1) | (next << 63);
    }
    trim();
  }

  u64 mod_u64(const PrimeModulus& q) const {
    u64 r = 0;
    for (std::size_t i = words_.size(); i-- > 0;) {
      r = barrett_reduce_128(words_[i], r, q);
    }
    return r;
  }

  long double to_long_double() const {
    long double v = 0.0L;
    for (std::size_t i = words_.size(); i-- > 0;) {
      v = v * 18446744073709551616.0L + static_cast<long double>(words_[i]);
    }
    return v;
  }

 private:
  void trim() {
    while (words_.size() > 1 && words_.back() == 0) words_.pop_back();
  }

  std::vector<u64> words_;
};

}  // namespace detail

}  // namespace henet
