// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "henet/modmath.hpp"
#include "henet/rng.hpp"

using namespace henet;

namespace {

// Arbitrary-precision oracle: the compiler's native 128-bit division,
// independent of every Barrett code path.
u64 mod_oracle(u128 z, u64 q) { return static_cast<u64>(z % q); }

// Schoolbook negacyclic convolution oracle: c = a*b mod (X^N + 1, q).
std::vector<u64> negacyclic_mul_oracle(const std::vector<u64>& a, const std::vector<u64>& b,
                                       u64 q) {
  std::size_t n = a.size();
  std::vector<u64> c(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      u128 prod = static_cast<u128>(a[i]) * b[j] % q;
      std::size_t k = i + j;
      if (k < n) {
        c[k] = static_cast<u64>((c[k] + prod) % q);
      } else {
        // X^N = -1 wraps with a sign flip.
        k -= n;
        c[k] = static_cast<u64>((c[k] + q - static_cast<u64>(prod)) % q);
      }
    }
  }
  return c;
}

RingElement random_poly(u32 n, const PrimeModulus& q, Chacha20Rng& rng) {
  RingElement x(n, 1, PolyDomain::Coefficient);
  for (auto& w : x.words()) w = rng.next_below(q.value);
  return x;
}

}  // namespace

TEST_CASE("barrett_reduce_128 matches the big-integer oracle", "[modmath]") {
  PrimeModulus q7(7);
  CHECK(barrett_reduce_128(u128{0}, q7) == 0);
  CHECK(barrett_reduce_128(u128{100}, q7) == 2);

  PrimeModulus mersenne61((u64{1} << 61) - 1);
  u128 z = (static_cast<u128>(1) << 64) + 12345;
  CHECK(barrett_reduce_128(z, mersenne61) == mod_oracle(z, mersenne61.value));

  std::vector<PrimeModulus> moduli = {PrimeModulus(7), PrimeModulus(1073741789),
                                      PrimeModulus((u64{1} << 61) - 1),
                                      PrimeModulus(1125899906990081ull)};
  Chacha20Rng rng(42);
  for (const auto& q : moduli) {
    // Boundary cases first.
    u128 qv = q.value;
    for (u128 zb : {u128{0}, qv - 1, qv, qv * qv, static_cast<u128>(~u128{0})}) {
      CHECK(barrett_reduce_128(zb, q) == mod_oracle(zb, q.value));
    }
    for (int i = 0; i < 20000; ++i) {
      u128 zr = (static_cast<u128>(rng.next_u64()) << 64) | rng.next_u64();
      REQUIRE(barrett_reduce_128(zr, q) == mod_oracle(zr, q.value));
    }
  }
}

TEST_CASE("barrett_reduce_64 matches the oracle on 32-bit moduli", "[modmath]") {
  PrimeModulus q3(3);
  CHECK(barrett_reduce_64(0, q3) == 0);

  PrimeModulus q30((u64{1} << 30) - 35);
  CHECK(barrett_reduce_64(u64{1} << 32, q30) == mod_oracle(u64{1} << 32, q30.value));
  CHECK(barrett_reduce_64(q30.value, q30) == 0);

  Chacha20Rng rng(43);
  for (int i = 0; i < 20000; ++i) {
    u64 z = rng.next_u64();
    u64 got = barrett_reduce_64(z, q30);
    REQUIRE(got == mod_oracle(z, q30.value));
    REQUIRE(got == barrett_reduce_128(u128{z}, q30));
  }

  PrimeModulus wide((u64{1} << 61) - 1);
  CHECK_THROWS_AS(barrett_reduce_64(12345, wide), ValidationError);
}

TEST_CASE("modular add/sub/mul basics", "[modmath]") {
  PrimeModulus q7(7);
  CHECK(mod_add(3, 5, q7) == 1);
  CHECK(mod_add(6, 1, q7) == 0);
  CHECK(mod_sub(0, 1, q7) == 6);
  CHECK(mod_mul(3, 5, q7) == 1);

  Chacha20Rng rng(44);
  PrimeModulus q(1099511922689ull);
  for (int i = 0; i < 5000; ++i) {
    u64 a = rng.next_below(q.value);
    u64 b = rng.next_below(q.value);
    REQUIRE(mod_mul(a, 1, q) == a);
    REQUIRE(mod_mul(a, b, q) == mod_oracle(static_cast<u128>(a) * b, q.value));
    REQUIRE(mod_add(a, b, q) == mod_oracle(static_cast<u128>(a) + b, q.value));
  }
}

TEST_CASE("find_ntt_root returns a verified primitive root", "[modmath]") {
  PrimeModulus q17(17);
  u64 r = find_ntt_root(q17, 4);
  // Exhaustive order check: multiplicative order must be exactly 2N = 8.
  u64 acc = 1;
  int order = 0;
  for (int k = 1; k <= 16; ++k) {
    acc = mod_mul(acc, r, q17);
    if (acc == 1) {
      order = k;
      break;
    }
  }
  CHECK(order == 8);

  PrimeModulus q97(97);
  u64 r97 = find_ntt_root(q97, 8);
  acc = 1;
  order = 0;
  for (int k = 1; k <= 96; ++k) {
    acc = mod_mul(acc, r97, q97);
    if (acc == 1) {
      order = k;
      break;
    }
  }
  CHECK(order == 16);

  PrimeModulus q11(11);
  CHECK_THROWS_AS(find_ntt_root(q11, 4), ValidationError);
}

TEST_CASE("NTT round-trip identity", "[modmath]") {
  Chacha20Rng rng(45);
  for (u64 qv : {u64{17}, u64{97}, u64{1073750017}, u64{1125899906990081ull}}) {
    for (u32 n : {u32{4}, u32{8}, u32{16}}) {
      PrimeModulus q(qv);
      if ((qv - 1) % (2 * n) != 0) continue;
      NttTables tables(q, n);
      std::vector<NttTables> tv = {tables};
      RingElement x = random_poly(n, q, rng);
      RingElement y = x;
      ntt_forward(y, tv);
      CHECK(y.domain() == PolyDomain::Ntt);
      ntt_inverse(y, tv);
      REQUIRE(y == x);
    }
  }
}

TEST_CASE("NTT pointwise product equals schoolbook negacyclic convolution", "[modmath]") {
  Chacha20Rng rng(46);
  struct Case {
    u32 n;
    u64 q;
  };
  for (Case c : {Case{4, 17}, Case{8, 17}, Case{16, 97}, Case{16, 7681}}) {
    PrimeModulus q(c.q);
    NttTables tables(q, c.n);
    std::vector<NttTables> tv = {tables};
    for (int trial = 0; trial < 200; ++trial) {
      RingElement a = random_poly(c.n, q, rng);
      RingElement b = random_poly(c.n, q, rng);
      std::vector<u64> av(a.words()), bv(b.words());

      RingElement fa = a, fb = b;
      ntt_forward(fa, tv);
      ntt_forward(fb, tv);
      RingElement fc(c.n, 1, PolyDomain::Ntt);
      for (u32 i = 0; i < c.n; ++i) fc.limb(0)[i] = mod_mul(fa.limb(0)[i], fb.limb(0)[i], q);
      ntt_inverse(fc, tv);

      auto expected = negacyclic_mul_oracle(av, bv, c.q);
      REQUIRE(std::equal(expected.begin(), expected.end(), fc.limb(0).begin()));
    }
  }
}

TEST_CASE("NTT of the zero polynomial is zero and domain flags are enforced", "[modmath]") {
  PrimeModulus q(97);
  NttTables tables(q, 8);
  std::vector<NttTables> tv = {tables};
  RingElement zero(8, 1, PolyDomain::Coefficient);
  RingElement z = zero;
  ntt_forward(z, tv);
  for (u64 w : z.words()) CHECK(w == 0);

  CHECK_THROWS_AS(ntt_forward(z, tv), ValidationError);  // already in NTT domain
  ntt_inverse(z, tv);
  CHECK_THROWS_AS(ntt_inverse(z, tv), ValidationError);
}

TEST_CASE("PrimeModulus validates its invariants", "[modmath]") {
  CHECK_THROWS_AS(PrimeModulus(15), ValidationError);            // composite
  CHECK_THROWS_AS(PrimeModulus(u64{1} << 63), ValidationError);  // too wide
  PrimeModulus q(1073750017);
  CHECK(q.bit_width == 31);
  CHECK(q.barrett_ratio_64 == static_cast<u64>((static_cast<u128>(1) << 64) / q.value));
}

TEST_CASE("WideUint arithmetic agrees with native 128-bit math", "[modmath]") {
  Chacha20Rng rng(47);
  for (int i = 0; i < 2000; ++i) {
    u64 a = rng.next_u64() >> 1;
    u64 m = rng.next_u64() >> 1;
    detail::WideUint w(a);
    w.mul_small(m);
    u128 expect = static_cast<u128>(a) * m;
    PrimeModulus q(1125899906990081ull);
    REQUIRE(w.mod_u64(q) == static_cast<u64>(expect % q.value));

    detail::WideUint x(a);
    detail::WideUint y(m);
    x.add(y);
    REQUIRE(x.mod_u64(q) == static_cast<u64>((static_cast<u128>(a) + m) % q.value));
    if (a >= m) {
      detail::WideUint d(a);
      d.sub(y);
      REQUIRE(d.mod_u64(q) == (a - m) % q.value);
    }
  }
}
