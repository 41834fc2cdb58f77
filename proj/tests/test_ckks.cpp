// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>
#include <map>

#include "henet/ckks.hpp"
#include "henet/serialize.hpp"

using namespace henet;
using Cplx = std::complex<double>;

namespace {

std::shared_ptr<const CkksContext> test_ctx(Preset p) {
  static std::map<Preset, std::shared_ptr<const CkksContext>> cache;
  auto it = cache.find(p);
  if (it == cache.end()) it = cache.emplace(p, CkksContext::create(p)).first;
  return it->second;
}

std::vector<double> random_batch(Chacha20Rng& rng, std::size_t count, double lo, double hi) {
  std::vector<double> v(count);
  for (auto& x : v) x = lo + rng.next_double() * (hi - lo);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("keygen is deterministic under the seed", "[ckks]") {
  auto ctx = test_ctx(Preset::P12);
  auto k1 = keygen(*ctx, 0, true);
  auto k2 = keygen(*ctx, 0, true);
  CHECK(k1.secret.s == k2.secret.s);
  REQUIRE(k1.relin.has_value());
  CHECK(k1.relin->parts[0][0] == k2.relin->parts[0][0]);

  auto k3 = keygen(*ctx, 1, true);
  CHECK_FALSE(k1.secret.s == k3.secret.s);
}

TEST_CASE("relin keys require a special prime", "[ckks]") {
  auto ctx = test_ctx(Preset::P11);
  CHECK_THROWS_AS(keygen(*ctx, 0, true), ValidationError);
  CHECK_NOTHROW(keygen(*ctx, 0, false));
}

TEST_CASE("encrypt/decrypt round-trip", "[ckks]") {
  auto ctx = test_ctx(Preset::P13);
  auto keys = keygen(*ctx, 7, false);
  Chacha20Rng rng(100);
  auto values = random_batch(rng, ctx->slot_count(), -10.0, 10.0);
  auto ct = encrypt_batch(*ctx, pack_real(values), keys.secret, 1);
  auto back = decrypt_batch(*ctx, ct, keys.secret, values.size());
  CHECK(max_abs_diff(values, back.values) < 1e-6);

  // Determinism under a fixed seed.
  auto ct2 = encrypt_batch(*ctx, pack_real(values), keys.secret, 1);
  CHECK(ct.polys[0] == ct2.polys[0]);
  CHECK(ct.polys[1] == ct2.polys[1]);

  // Zero message decrypts to roughly zero.
  std::vector<double> zeros(ctx->slot_count(), 0.0);
  auto ctz = encrypt_batch(*ctx, pack_real(zeros), keys.secret, 2);
  auto backz = decrypt_batch(*ctx, ctz, keys.secret, zeros.size());
  CHECK(max_abs_diff(zeros, backz.values) < 1e-6);
}

TEST_CASE("ciphertext addition and subtraction against the cleartext oracle", "[ckks]") {
  auto ctx = test_ctx(Preset::P12);
  auto keys = keygen(*ctx, 8, false);
  Chacha20Rng rng(101);
  auto m1 = random_batch(rng, ctx->slot_count(), -5.0, 5.0);
  auto m2 = random_batch(rng, ctx->slot_count(), -5.0, 5.0);
  auto ct1 = encrypt_batch(*ctx, pack_real(m1), keys.secret, 11);
  auto ct2 = encrypt_batch(*ctx, pack_real(m2), keys.secret, 12);

  auto sum = decrypt_batch(*ctx, add_ct_ct(*ctx, ct1, ct2), keys.secret, m1.size());
  auto diff = decrypt_batch(*ctx, sub_ct_ct(*ctx, ct1, ct2), keys.secret, m1.size());
  std::vector<double> esum(m1.size()), ediff(m1.size());
  for (std::size_t i = 0; i < m1.size(); ++i) {
    esum[i] = m1[i] + m2[i];
    ediff[i] = m1[i] - m2[i];
  }
  CHECK(max_abs_diff(esum, sum.values) < 1e-5);
  CHECK(max_abs_diff(ediff, diff.values) < 1e-5);

  // m + 0 = m and m - m = 0.
  std::vector<double> zeros(m1.size(), 0.0);
  auto ctz = encrypt_batch(*ctx, pack_real(zeros), keys.secret, 13);
  auto same = decrypt_batch(*ctx, add_ct_ct(*ctx, ct1, ctz), keys.secret, m1.size());
  CHECK(max_abs_diff(m1, same.values) < 1e-5);
  auto zero = decrypt_batch(*ctx, sub_ct_ct(*ctx, ct1, ct1), keys.secret, m1.size());
  CHECK(max_abs_diff(zeros, zero.values) < 1e-12);
}

TEST_CASE("cipher-plain addition matches both the oracle and the packed path", "[ckks]") {
  for (Preset preset : {Preset::P12, Preset::P13}) {
    auto ctx = test_ctx(preset);
    auto keys = keygen(*ctx, 9, false);
    Chacha20Rng rng(102);
    auto m = random_batch(rng, ctx->slot_count(), -5.0, 5.0);
    auto ct = encrypt_batch(*ctx, pack_real(m), keys.secret, 21);
    const double scale = ctx->params().default_scale;
    const std::size_t level = ctx->chain_length();

    // Adding encoded zeros is an identity on the ciphertext bits.
    auto zero_pt = encode_scalar(*ctx, 0.0, level, scale);
    auto same = add_ct_pt_scalar(*ctx, ct, zero_pt);
    CHECK(same.polys[0] == ct.polys[0]);

    for (int trial = 0; trial < 25; ++trial) {
      double w = rng.next_double() * 10 - 5;
      auto spt = encode_scalar(*ctx, w, level, scale);
      auto scalar_out = add_ct_pt_scalar(*ctx, ct, spt);
      auto vector_out = add_ct_pt_vector(*ctx, ct, expand_scalar(*ctx, spt));
      // Bit-identical ciphertexts, not merely close.
      REQUIRE(scalar_out.polys[0] == vector_out.polys[0]);
      REQUIRE(scalar_out.polys[1] == vector_out.polys[1]);

      auto got = decrypt_batch(*ctx, scalar_out, keys.secret, m.size());
      double worst = 0;
      for (std::size_t i = 0; i < m.size(); ++i) {
        worst = std::max(worst, std::fabs(got.values[i] - (m[i] + w)));
      }
      REQUIRE(worst < 1e-5);
    }

    // Cross-path: ct + pt tracks ct + encrypt(pt) within fresh noise.
    double w = 2.5;
    auto pt_path = decrypt_batch(
        *ctx, add_ct_pt_scalar(*ctx, ct, encode_scalar(*ctx, w, level, scale)), keys.secret,
        m.size());
    std::vector<double> wv(m.size(), w);
    auto enc_path = decrypt_batch(
        *ctx, add_ct_ct(*ctx, ct, encrypt_batch(*ctx, pack_real(wv), keys.secret, 22)),
        keys.secret, m.size());
    CHECK(max_abs_diff(pt_path.values, enc_path.values) < 1e-5);
  }
}

TEST_CASE("cipher-plain multiplication: scalar path is bit-equal to the general path", "[ckks]") {
  // P12 exercises the 64-bit Barrett fast path (31-bit limbs); P13's 41/51-bit
  // limbs exercise the 128-bit fallback.
  for (Preset preset : {Preset::P12, Preset::P13}) {
    auto ctx = test_ctx(preset);
    auto keys = keygen(*ctx, 10, false);
    Chacha20Rng rng(103);
    auto m = random_batch(rng, ctx->slot_count(), -4.0, 4.0);
    auto ct = encrypt_batch(*ctx, pack_real(m), keys.secret, 31);
    const double scale = ctx->params().default_scale;
    const std::size_t level = ctx->chain_length();

    for (int trial = 0; trial < 25; ++trial) {
      double w = rng.next_double() * 4 - 2;
      auto spt = encode_scalar(*ctx, w, level, scale);
      auto scalar_out = mul_ct_pt_scalar(*ctx, ct, spt);
      auto general_out = mul_ct_pt_general(*ctx, ct, expand_scalar(*ctx, spt));
      REQUIRE(scalar_out.polys[0] == general_out.polys[0]);
      REQUIRE(scalar_out.polys[1] == general_out.polys[1]);
      REQUIRE(scalar_out.scale == ct.scale * scale);

      auto got = decrypt_batch(*ctx, scalar_out, keys.secret, m.size());
      double worst = 0;
      for (std::size_t i = 0; i < m.size(); ++i) {
        worst = std::max(worst, std::fabs(got.values[i] - m[i] * w));
      }
      REQUIRE(worst < 1e-4);
    }

    // Multiplying by an encoding of one preserves values at squared scale.
    auto one = mul_ct_pt_scalar(*ctx, ct, encode_scalar(*ctx, 1.0, level, scale));
    CHECK(one.scale == ct.scale * scale);
    auto got = decrypt_batch(*ctx, one, keys.secret, m.size());
    CHECK(max_abs_diff(m, got.values) < 1e-5);
  }
}

TEST_CASE("cipher-cipher multiply, square, relinearize", "[ckks]") {
  auto ctx = test_ctx(Preset::P13);
  auto keys = keygen(*ctx, 11, true);
  Chacha20Rng rng(104);
  auto m1 = random_batch(rng, ctx->slot_count(), -2.0, 2.0);
  auto m2 = random_batch(rng, ctx->slot_count(), -2.0, 2.0);
  auto ct1 = encrypt_batch(*ctx, pack_real(m1), keys.secret, 41);
  auto ct2 = encrypt_batch(*ctx, pack_real(m2), keys.secret, 42);

  auto prod3 = mul_ct_ct(*ctx, ct1, ct2);
  REQUIRE(prod3.size() == 3);

  // A size-3 ciphertext decrypts directly; relinearization must agree with it.
  auto direct = decrypt_batch(*ctx, prod3, keys.secret, m1.size());
  auto relin = relinearize(*ctx, prod3, *keys.relin);
  REQUIRE(relin.size() == 2);
  auto switched = decrypt_batch(*ctx, relin, keys.secret, m1.size());

  std::vector<double> expect(m1.size());
  for (std::size_t i = 0; i < m1.size(); ++i) expect[i] = m1[i] * m2[i];
  CHECK(max_abs_diff(expect, direct.values) < 1e-4);
  CHECK(max_abs_diff(expect, switched.values) < 1e-4);
  // Relinearization noise per slot stays under 2^-15.
  CHECK(max_abs_diff(direct.values, switched.values) < std::ldexp(1.0, -15));

  auto sq = relinearize(*ctx, square(*ctx, ct1), *keys.relin);
  auto got_sq = decrypt_batch(*ctx, sq, keys.secret, m1.size());
  std::vector<double> expect_sq(m1.size());
  for (std::size_t i = 0; i < m1.size(); ++i) expect_sq[i] = m1[i] * m1[i];
  CHECK(max_abs_diff(expect_sq, got_sq.values) < 1e-4);

  CHECK_THROWS_AS(relinearize(*ctx, ct1, *keys.relin), ValidationError);  // size 2

  // Complex packing forbids cipher-cipher multiplication.
  auto cplx = encrypt_batch(*ctx, pack_complex({1.0, 2.0, 3.0, 4.0}), keys.secret, 43);
  CHECK_THROWS_AS(mul_ct_ct(*ctx, cplx, cplx), ValidationError);
  CHECK_THROWS_AS(square(*ctx, cplx), ValidationError);
}

TEST_CASE("rescale drops limbs and divides the scale exactly", "[ckks]") {
  auto ctx = test_ctx(Preset::P13);
  auto keys = keygen(*ctx, 12, false);
  Chacha20Rng rng(105);
  auto m = random_batch(rng, ctx->slot_count(), -3.0, 3.0);
  auto ct = encrypt_batch(*ctx, pack_real(m), keys.secret, 51);
  const std::size_t level = ctx->chain_length();

  // Multiply by an encoding of 1 at the top modulus as the scale, then
  // rescale: values preserved, scale bookkeeping exact.
  const double p_top = static_cast<double>(ctx->modulus(level - 1).value);
  auto ct_scaled = mul_ct_pt_scalar(*ctx, ct, encode_scalar(*ctx, 1.0, level, p_top));
  auto down = rescale_next(*ctx, ct_scaled);
  REQUIRE(down.level() == level - 1);
  REQUIRE(down.scale == ct_scaled.scale / p_top);
  auto got = decrypt_batch(*ctx, down, keys.secret, m.size());
  CHECK(max_abs_diff(m, got.values) < std::ldexp(1.0, -18));

  // Multi-limb rescale drops exactly (l - l') limbs.
  auto two = rescale(*ctx, ct_scaled, level - 2);
  REQUIRE(two.level() == level - 2);

  // Level-1 ciphertexts cannot rescale further.
  auto bottom = rescale(*ctx, ct_scaled, 1);
  CHECK_THROWS_AS(rescale_next(*ctx, bottom), ValidationError);
}

TEST_CASE("level and scale mismatches are rejected", "[ckks]") {
  auto ctx = test_ctx(Preset::P13);
  auto keys = keygen(*ctx, 13, false);
  std::vector<double> v(8, 1.0);
  auto ct = encrypt_batch(*ctx, pack_real(v), keys.secret, 61);
  auto low = rescale_next(*ctx, mul_ct_pt_scalar(
                                    *ctx, ct,
                                    encode_scalar(*ctx, 1.0, ctx->chain_length(),
                                                  ctx->params().default_scale)));
  CHECK_THROWS_AS(add_ct_ct(*ctx, ct, low), ValidationError);    // level mismatch
  auto other = mul_ct_pt_scalar(*ctx, ct, encode_scalar(*ctx, 1.0, ctx->chain_length(), 2.0));
  CHECK_THROWS_AS(add_ct_ct(*ctx, ct, other), ValidationError);  // scale mismatch
  auto cplx = encrypt_batch(*ctx, pack_complex({1.0, 2.0}), keys.secret, 62);
  CHECK_THROWS_AS(add_ct_ct(*ctx, ct, cplx), ValidationError);   // packing mismatch
  auto pt = encode_scalar(*ctx, 1.0, ctx->chain_length() - 1, ctx->params().default_scale);
  CHECK_THROWS_AS(add_ct_pt_scalar(*ctx, ct, pt), ValidationError);
  CHECK_THROWS_AS(mul_ct_pt_scalar(*ctx, low, encode_scalar(*ctx, 1.0, ctx->chain_length(),
                                                            ctx->params().default_scale)),
                  ValidationError);
}

TEST_CASE("complex packing supports add and broadcast-multiply", "[ckks]") {
  auto ctx = test_ctx(Preset::P11);
  auto keys = keygen(*ctx, 14, false);
  const std::size_t level = 1;
  const double scale = ctx->params().default_scale;

  auto ct = encrypt_batch(*ctx, pack_complex({1.0, 2.0, 3.0, 4.0}), keys.secret, 71);
  auto doubled = mul_ct_pt_scalar(*ctx, ct, encode_scalar(*ctx, 2.0, level, scale));
  auto got = decrypt_batch(*ctx, doubled, keys.secret, 4);
  std::vector<double> expect = {2.0, 4.0, 6.0, 8.0};
  CHECK(max_abs_diff(expect, got.values) < 1e-3);

  auto zeroed = mul_ct_pt_scalar(*ctx, ct, encode_scalar(*ctx, 0.0, level, scale));
  auto zgot = decrypt_batch(*ctx, zeroed, keys.secret, 4);
  CHECK(max_abs_diff(std::vector<double>(4, 0.0), zgot.values) < 1e-3);

  auto ct2 = encrypt_batch(*ctx, pack_complex({10.0, 20.0, 30.0, 40.0}), keys.secret, 72);
  auto sum = decrypt_batch(*ctx, add_ct_ct(*ctx, ct, ct2), keys.secret, 4);
  std::vector<double> esum = {11.0, 22.0, 33.0, 44.0};
  CHECK(max_abs_diff(esum, sum.values) < 1e-3);
}

TEST_CASE("complex-packed pipelines track the real-packed reference", "[ckks]") {
  auto ctx = test_ctx(Preset::P12);
  auto keys = keygen(*ctx, 15, false);
  Chacha20Rng rng(106);
  const std::size_t count = 64;  // 2k reals complex-packed into k slots
  auto values = random_batch(rng, count, -3.0, 3.0);
  const std::size_t level = ctx->chain_length();
  const double scale = ctx->params().default_scale;

  auto run = [&](PackingMode packing) {
    CleartextBatch batch{packing, values};
    auto ct = encrypt_batch(*ctx, batch, keys.secret, 81);
    // Constant additions must reach both packed components, hence the
    // packing-aware broadcast form rather than the bare scalar plaintext.
    ct = add_ct_pt_vector(*ctx, ct, encode_constant_packed(*ctx, 0.75, packing, level, scale));
    ct = mul_ct_pt_scalar(*ctx, ct, encode_scalar(*ctx, -1.5, level, scale));
    auto other = encrypt_batch(*ctx, batch, keys.secret, 82);
    other = mul_ct_pt_scalar(*ctx, other, encode_scalar(*ctx, 0.25, level, scale));
    ct = sub_ct_ct(*ctx, ct, other);
    return decrypt_batch(*ctx, ct, keys.secret, count).values;
  };

  auto real_out = run(PackingMode::Real);
  auto cplx_out = run(PackingMode::Complex);
  std::vector<double> expect(count);
  for (std::size_t i = 0; i < count; ++i) {
    expect[i] = (values[i] + 0.75) * -1.5 - values[i] * 0.25;
  }
  CHECK(max_abs_diff(expect, real_out) < 1e-4);
  // Complex packing stays within twice the real-packing envelope.
  CHECK(max_abs_diff(real_out, cplx_out) < 2e-4);
}

TEST_CASE("serialization round-trips byte-identically", "[ckks]") {
  auto ctx = test_ctx(Preset::P12);
  auto keys = keygen(*ctx, 16, true);
  Chacha20Rng rng(107);
  auto m = random_batch(rng, 32, -2.0, 2.0);
  auto ct = encrypt_batch(*ctx, pack_real(m), keys.secret, 91);
  ct = mul_ct_pt_scalar(*ctx, ct,
                        encode_scalar(*ctx, 0.5, ctx->chain_length(), ctx->params().default_scale));
  ct = rescale_next(*ctx, ct);

  auto bytes = serialize_ciphertext(*ctx, ct);
  auto back = deserialize_ciphertext(*ctx, bytes);
  auto bytes2 = serialize_ciphertext(*ctx, back);
  REQUIRE(bytes == bytes2);
  CHECK(back.scale == ct.scale);
  CHECK(back.level() == ct.level());
  CHECK(back.polys[0] == ct.polys[0]);

  auto skb = serialize_secret_key(*ctx, keys.secret);
  auto sk2 = deserialize_secret_key(*ctx, skb);
  CHECK(sk2.s == keys.secret.s);
  auto rkb = serialize_relin_key(*ctx, *keys.relin);
  auto rk2 = deserialize_relin_key(*ctx, rkb);
  CHECK(rk2.parts[0][1] == keys.relin->parts[0][1]);

  // Truncated buffer fails cleanly.
  auto truncated = std::vector<u8>(bytes.begin(), bytes.begin() + bytes.size() / 2);
  CHECK_THROWS_AS(deserialize_ciphertext(*ctx, truncated), ValidationError);
}
