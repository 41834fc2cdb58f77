// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>

#include "henet/encoding.hpp"
#include "henet/rng.hpp"

namespace henet {

// ---------------------------------------------------------------------------
// Keys. The secret key is a ternary RLWE secret held in NTT form over the
// full basis (chain plus special prime) so it can serve both ciphertext
// operations and key-switching. The relinearization key switches s^2 -> s in
// raise-the-modulus form: component j encrypts P * s^2 on chain limb j over
// the extended modulus q_L * P.
// ---------------------------------------------------------------------------

struct SecretKey {
  RingElement s;  // NTT domain, chain limbs first, special limb last
};

struct RelinKey {
  std::vector<std::array<RingElement, 2>> parts;  // one (c0, c1) per chain limb
};

struct KeyPair {
  SecretKey secret;
  std::optional<RelinKey> relin;
};

struct Ciphertext {
  std::vector<RingElement> polys;  // 2, or 3 transiently between multiply and relinearize
  double scale = 0.0;
  PackingMode packing = PackingMode::Real;
  u32 slots = 0;

  std::size_t size() const { return polys.size(); }
  std::size_t level() const { return polys.empty() ? 0 : polys[0].level(); }
};

namespace detail {

inline std::size_t full_basis_size(const CkksContext& ctx) {
  return ctx.chain_length() + (ctx.has_special() ? 1 : 0);
}

inline const PrimeModulus& basis_modulus(const CkksContext& ctx, std::size_t i) {
  return i < ctx.chain_length() ? ctx.modulus(i) : ctx.special();
}

inline const NttTables& basis_table(const CkksContext& ctx, std::size_t i) {
  return i < ctx.chain_length() ? ctx.chain_tables()[i] : ctx.special_table();
}

/// Uniform element sampled directly in NTT form.
inline RingElement sample_uniform(const CkksContext& ctx, Chacha20Rng& rng, std::size_t limbs) {
  RingElement x(ctx.degree(), limbs, PolyDomain::Ntt);
  for (std::size_t i = 0; i < limbs; ++i) {
    const u64 q = basis_modulus(ctx, i).value;
    for (auto& w : x.limb(i)) w = rng.next_below(q);
  }
  return x;
}

/// One signed integer polynomial reduced into every limb, then NTT'd.
inline RingElement lift_signed(const CkksContext& ctx, std::span<const i64> coeffs,
                               std::size_t limbs) {
  RingElement x(ctx.degree(), limbs, PolyDomain::Coefficient);
  for (std::size_t i = 0; i < limbs; ++i) {
    const PrimeModulus& q = basis_modulus(ctx, i);
    auto limb = x.limb(i);
    for (u32 n = 0; n < ctx.degree(); ++n) limb[n] = mod_from_signed(coeffs[n], q);
    ntt_forward_limb(limb, basis_table(ctx, i));
  }
  x.set_domain(PolyDomain::Ntt);
  return x;
}

inline RingElement sample_error(const CkksContext& ctx, Chacha20Rng& rng, std::size_t limbs) {
  std::vector<i64> e(ctx.degree());
  for (auto& v : e) v = sample_gaussian(rng, kNoiseStdDev);
  return lift_signed(ctx, e, limbs);
}

// Element-wise limb arithmetic. Both operands must share degree and domain;
// the left side's limb count bounds the operation.
inline void add_inplace(const CkksContext& ctx, RingElement& a, const RingElement& b) {
  require(b.level() >= a.level(), "limb count mismatch");
  for (std::size_t i = 0; i < a.level(); ++i) {
    const PrimeModulus& q = basis_modulus(ctx, i);
    auto la = a.limb(i);
    auto lb = b.limb(i);
    for (u32 n = 0; n < ctx.degree(); ++n) la[n] = mod_add(la[n], lb[n], q);
  }
}

inline void sub_inplace(const CkksContext& ctx, RingElement& a, const RingElement& b) {
  for (std::size_t i = 0; i < a.level(); ++i) {
    const PrimeModulus& q = basis_modulus(ctx, i);
    auto la = a.limb(i);
    auto lb = b.limb(i);
    for (u32 n = 0; n < ctx.degree(); ++n) la[n] = mod_sub(la[n], lb[n], q);
  }
}

inline RingElement mul_elem(const CkksContext& ctx, const RingElement& a, const RingElement& b,
                            std::size_t limbs) {
  RingElement out(a.degree(), limbs, PolyDomain::Ntt);
  for (std::size_t i = 0; i < limbs; ++i) {
    const PrimeModulus& q = basis_modulus(ctx, i);
    auto la = a.limb(i);
    auto lb = b.limb(i);
    auto lo = out.limb(i);
    for (u32 n = 0; n < a.degree(); ++n) lo[n] = mod_mul(la[n], lb[n], q);
  }
  return out;
}

inline void negate_inplace(const CkksContext& ctx, RingElement& a) {
  for (std::size_t i = 0; i < a.level(); ++i) {
    const PrimeModulus& q = basis_modulus(ctx, i);
    for (auto& w : a.limb(i)) w = mod_neg(w, q);
  }
}

/// Rounded division by the last limb's modulus: x <- round(x / p_last),
/// computed limb-wise as floor((x + p/2) / p) and dropping the divisor limb.
/// Input and output are in coefficient domain.
inline void divide_round_last(RingElement& x, std::span<const PrimeModulus> moduli) {
  require(x.domain() == PolyDomain::Coefficient, "divide_round_last needs coefficient domain");
  require(x.level() == moduli.size() && x.level() >= 2, "limb/modulus mismatch");
  const std::size_t last = x.level() - 1;
  const PrimeModulus& p = moduli[last];
  const u64 half = p.value >> 1;

  auto rl = x.limb(last);
  for (auto& v : rl) v = mod_add(v, half, p);  // r = (x + p/2) mod p

  for (std::size_t i = 0; i < last; ++i) {
    const PrimeModulus& q = moduli[i];
    const u64 half_mod = barrett_reduce_128(half, 0, q);
    const u64 p_inv = mod_inv(barrett_reduce_128(p.value, 0, q), q);
    auto li = x.limb(i);
    for (u32 n = 0; n < x.degree(); ++n) {
      u64 r = barrett_reduce_128(rl[n], 0, q);
      u64 y = mod_sub(mod_add(li[n], half_mod, q), r, q);
      li[n] = mod_mul(y, p_inv, q);
    }
  }
  x.truncate_level(last);
}

inline std::vector<PrimeModulus> chain_moduli(const CkksContext& ctx, std::size_t level) {
  std::vector<PrimeModulus> m;
  m.reserve(level);
  for (std::size_t i = 0; i < level; ++i) m.push_back(ctx.modulus(i));
  return m;
}

inline void check_same_shape(const Ciphertext& a, const Ciphertext& b) {
  require(a.level() == b.level(), "ciphertext level mismatch");
  require(a.packing == b.packing, "packing mode mismatch");
  require(a.size() == b.size(), "ciphertext size mismatch");
  const double rel = std::fabs(a.scale - b.scale) / a.scale;
  require(rel <= std::ldexp(1.0, -40), "ciphertext scale mismatch");
}

inline void check_pt_level(const Ciphertext& ct, std::size_t pt_level, double pt_scale,
                           bool scales_must_match) {
  require(ct.level() == pt_level, "ciphertext/plaintext level mismatch");
  if (scales_must_match) {
    const double rel = std::fabs(ct.scale - pt_scale) / ct.scale;
    require(rel <= std::ldexp(1.0, -40), "ciphertext/plaintext scale mismatch");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Key generation. Deterministic under the seed.
// ---------------------------------------------------------------------------

inline KeyPair keygen(const CkksContext& ctx, u64 seed, bool with_relin) {
  if (with_relin) {
    require(ctx.has_special(),
            "relinearization keys need a special prime (not present in these parameters)");
  }
  const std::size_t full = detail::full_basis_size(ctx);
  Chacha20Rng rng(seed, /*stream=*/0);

  std::vector<i64> s_coeffs(ctx.degree());
  for (auto& v : s_coeffs) v = sample_ternary(rng);
  SecretKey sk{detail::lift_signed(ctx, s_coeffs, full)};

  KeyPair pair{std::move(sk), std::nullopt};
  if (!with_relin) return pair;

  const std::size_t chain = ctx.chain_length();
  RingElement s_sq = detail::mul_elem(ctx, pair.secret.s, pair.secret.s, full);
  RelinKey rk;
  rk.parts.reserve(chain);
  for (std::size_t j = 0; j < chain; ++j) {
    RingElement a = detail::sample_uniform(ctx, rng, full);
    RingElement c0 = detail::sample_error(ctx, rng, full);
    RingElement as = detail::mul_elem(ctx, a, pair.secret.s, full);
    detail::sub_inplace(ctx, c0, as);  // c0 = e - a*s
    // Add P * s^2 on limb j only; that is the CRT form of P * E_j * s^2.
    const PrimeModulus& qj = ctx.modulus(j);
    const u64 p_mod = barrett_reduce_128(ctx.special().value, 0, qj);
    auto limb = c0.limb(j);
    auto s2 = s_sq.limb(j);
    for (u32 n = 0; n < ctx.degree(); ++n) {
      limb[n] = mod_add(limb[n], mod_mul(p_mod, s2[n], qj), qj);
    }
    rk.parts.push_back({std::move(c0), std::move(a)});
  }
  pair.relin = std::move(rk);
  return pair;
}

// ---------------------------------------------------------------------------
// Encrypt / decrypt. Symmetric RLWE: ct = (-a*s + m + e, a) at the plaintext
// level, fresh error from the centered rounded Gaussian.
// ---------------------------------------------------------------------------

inline Ciphertext encrypt(const CkksContext& ctx, const PackedPlaintext& pt, const SecretKey& sk,
                          u64 seed, PackingMode packing = PackingMode::Real) {
  const std::size_t level = pt.level();
  require(level >= 1 && level <= ctx.chain_length(), "plaintext level out of range");
  Chacha20Rng rng(seed, /*stream=*/1);

  RingElement a = detail::sample_uniform(ctx, rng, level);
  RingElement c0 = detail::sample_error(ctx, rng, level);
  RingElement as = detail::mul_elem(ctx, a, sk.s, level);
  detail::sub_inplace(ctx, c0, as);
  detail::add_inplace(ctx, c0, pt.poly);

  Ciphertext ct;
  ct.polys.push_back(std::move(c0));
  ct.polys.push_back(std::move(a));
  ct.scale = pt.scale;
  ct.packing = packing;
  ct.slots = ctx.slot_count();
  return ct;
}

inline Ciphertext encrypt_batch(const CkksContext& ctx, const CleartextBatch& batch,
                                const SecretKey& sk, u64 seed) {
  auto pt = encode_batch(ctx, batch, ctx.chain_length(), ctx.params().default_scale);
  return encrypt(ctx, pt, sk, seed, batch.packing);
}

inline PackedPlaintext decrypt(const CkksContext& ctx, const Ciphertext& ct, const SecretKey& sk) {
  require(ct.size() == 2 || ct.size() == 3, "ciphertext must have 2 or 3 polynomials");
  require(ct.level() >= 1, "ciphertext level must be at least 1");
  const std::size_t level = ct.level();
  RingElement m = ct.polys[0];
  RingElement c1s = detail::mul_elem(ctx, ct.polys[1], sk.s, level);
  detail::add_inplace(ctx, m, c1s);
  if (ct.size() == 3) {
    RingElement s_sq = detail::mul_elem(ctx, sk.s, sk.s, level);
    RingElement c2ss = detail::mul_elem(ctx, ct.polys[2], s_sq, level);
    detail::add_inplace(ctx, m, c2ss);
  }
  return PackedPlaintext{std::move(m), ct.scale};
}

inline CleartextBatch decrypt_batch(const CkksContext& ctx, const Ciphertext& ct,
                                    const SecretKey& sk, std::size_t count) {
  return decode_batch(ctx, decrypt(ctx, ct, sk), ct.packing, count);
}

// ---------------------------------------------------------------------------
// Homomorphic operations. All functions are pure: inputs in, fresh
// ciphertext out.
// ---------------------------------------------------------------------------

inline void add_ct_ct_inplace(const CkksContext& ctx, Ciphertext& a, const Ciphertext& b) {
  detail::check_same_shape(a, b);
  for (std::size_t k = 0; k < a.size(); ++k) detail::add_inplace(ctx, a.polys[k], b.polys[k]);
}

inline Ciphertext add_ct_ct(const CkksContext& ctx, const Ciphertext& a, const Ciphertext& b) {
  Ciphertext out = a;
  add_ct_ct_inplace(ctx, out, b);
  return out;
}

inline Ciphertext sub_ct_ct(const CkksContext& ctx, const Ciphertext& a, const Ciphertext& b) {
  detail::check_same_shape(a, b);
  Ciphertext out = a;
  for (std::size_t k = 0; k < out.size(); ++k) detail::sub_inplace(ctx, out.polys[k], b.polys[k]);
  return out;
}

/// ct[l][n] + pt[l][n] on the first component only.
inline void add_ct_pt_vector_inplace(const CkksContext& ctx, Ciphertext& ct,
                                     const PackedPlaintext& pt) {
  detail::check_pt_level(ct, pt.level(), pt.scale, /*scales_must_match=*/true);
  detail::add_inplace(ctx, ct.polys[0], pt.poly);
}

inline Ciphertext add_ct_pt_vector(const CkksContext& ctx, const Ciphertext& ct,
                                   const PackedPlaintext& pt) {
  Ciphertext out = ct;
  add_ct_pt_vector_inplace(ctx, out, pt);
  return out;
}

/// Scalar form of the addition: the per-limb summand is hoisted out of the
/// coefficient loop. Bit-identical to add_ct_pt_vector on the expansion.
inline void add_ct_pt_scalar_inplace(const CkksContext& ctx, Ciphertext& ct,
                                     const ScalarPlaintext& pt) {
  detail::check_pt_level(ct, pt.level(), pt.scale, /*scales_must_match=*/true);
  for (std::size_t i = 0; i < pt.level(); ++i) {
    const PrimeModulus& q = ctx.modulus(i);
    const u64 tmp = pt.residues[i];
    for (auto& w : ct.polys[0].limb(i)) w = mod_add(w, tmp, q);
  }
}

inline Ciphertext add_ct_pt_scalar(const CkksContext& ctx, const Ciphertext& ct,
                                   const ScalarPlaintext& pt) {
  Ciphertext out = ct;
  add_ct_pt_scalar_inplace(ctx, out, pt);
  return out;
}

/// Limb-wise product against a packed plaintext; always reduces through the
/// 128-bit Barrett path. No rescale happens here -- that is the graph's job.
inline void mul_ct_pt_general_inplace(const CkksContext& ctx, Ciphertext& ct,
                                      const PackedPlaintext& pt) {
  detail::check_pt_level(ct, pt.level(), pt.scale, /*scales_must_match=*/false);
  for (auto& poly : ct.polys) {
    for (std::size_t i = 0; i < poly.level(); ++i) {
      const PrimeModulus& q = ctx.modulus(i);
      auto lc = poly.limb(i);
      auto lp = pt.poly.limb(i);
      for (u32 n = 0; n < ctx.degree(); ++n) {
        u64 lo, hi;
        mul64_wide(lc[n], lp[n], &lo, &hi);
        lc[n] = barrett_reduce_128(lo, hi, q);
      }
    }
  }
  ct.scale = ct.scale * pt.scale;
}

inline Ciphertext mul_ct_pt_general(const CkksContext& ctx, const Ciphertext& ct,
                                    const PackedPlaintext& pt) {
  Ciphertext out = ct;
  mul_ct_pt_general_inplace(ctx, out, pt);
  return out;
}

/// Scalar form of the multiplication. Moduli that fit 32 bits take the
/// 64-bit Barrett reduction; wider limbs fall back to the 128-bit path with
/// the scalar still hoisted. Bit-identical to the general form on the
/// expansion.
inline void mul_ct_pt_scalar_inplace(const CkksContext& ctx, Ciphertext& ct,
                                     const ScalarPlaintext& pt) {
  detail::check_pt_level(ct, pt.level(), pt.scale, /*scales_must_match=*/false);
  for (auto& poly : ct.polys) {
    for (std::size_t i = 0; i < poly.level(); ++i) {
      const PrimeModulus& q = ctx.modulus(i);
      const u64 tmp = pt.residues[i];
      auto lc = poly.limb(i);
      if (q.bit_width <= 32) {
        for (u32 n = 0; n < ctx.degree(); ++n) {
          lc[n] = barrett_reduce_64(lc[n] * tmp, q);
        }
      } else {
        for (u32 n = 0; n < ctx.degree(); ++n) {
          u64 lo, hi;
          mul64_wide(lc[n], tmp, &lo, &hi);
          lc[n] = barrett_reduce_128(lo, hi, q);
        }
      }
    }
  }
  ct.scale = ct.scale * pt.scale;
}

inline Ciphertext mul_ct_pt_scalar(const CkksContext& ctx, const Ciphertext& ct,
                                   const ScalarPlaintext& pt) {
  Ciphertext out = ct;
  mul_ct_pt_scalar_inplace(ctx, out, pt);
  return out;
}

namespace detail {

inline void check_cc_mul(const Ciphertext& a) {
  require(a.packing == PackingMode::Real,
          "ciphertext-ciphertext multiply is undefined under complex packing");
  require(a.size() == 2, "operands must be size-2 ciphertexts");
  require(a.level() >= 1, "ciphertext exhausted");
}

}  // namespace detail

/// Tensor product (c0*d0, c0*d1 + c1*d0, c1*d1); output has 3 polynomials
/// until relinearization.
inline Ciphertext mul_ct_ct(const CkksContext& ctx, const Ciphertext& a, const Ciphertext& b) {
  detail::check_cc_mul(a);
  detail::check_cc_mul(b);
  detail::check_same_shape(a, b);
  const std::size_t level = a.level();
  Ciphertext out;
  out.polys.push_back(detail::mul_elem(ctx, a.polys[0], b.polys[0], level));
  RingElement mid = detail::mul_elem(ctx, a.polys[0], b.polys[1], level);
  detail::add_inplace(ctx, mid, detail::mul_elem(ctx, a.polys[1], b.polys[0], level));
  out.polys.push_back(std::move(mid));
  out.polys.push_back(detail::mul_elem(ctx, a.polys[1], b.polys[1], level));
  out.scale = a.scale * b.scale;
  out.packing = a.packing;
  out.slots = a.slots;
  return out;
}

inline Ciphertext square(const CkksContext& ctx, const Ciphertext& a) {
  detail::check_cc_mul(a);
  const std::size_t level = a.level();
  Ciphertext out;
  out.polys.push_back(detail::mul_elem(ctx, a.polys[0], a.polys[0], level));
  RingElement mid = detail::mul_elem(ctx, a.polys[0], a.polys[1], level);
  detail::add_inplace(ctx, mid, mid);
  out.polys.push_back(std::move(mid));
  out.polys.push_back(detail::mul_elem(ctx, a.polys[1], a.polys[1], level));
  out.scale = a.scale * a.scale;
  out.packing = a.packing;
  out.slots = a.slots;
  return out;
}

/// Key-switches the s^2 component back onto s: decompose c2 limb-wise,
/// multiply against the key over the extended basis, divide the special
/// prime back out, and fold into (c0, c1).
inline Ciphertext relinearize(const CkksContext& ctx, const Ciphertext& ct, const RelinKey& rk) {
  require(ct.size() == 3, "relinearize expects a size-3 ciphertext");
  require(ctx.has_special(), "relinearization needs a special prime");
  require(rk.parts.size() == ctx.chain_length(), "relinearization key has the wrong basis");
  const std::size_t level = ct.level();
  const std::size_t ext = level + 1;  // chain limbs + special
  const std::size_t key_special_idx = ctx.chain_length();

  RingElement c2 = ct.polys[2];
  ntt_inverse(c2, ctx.chain_tables(level));

  RingElement acc0(ctx.degree(), ext, PolyDomain::Ntt);
  RingElement acc1(ctx.degree(), ext, PolyDomain::Ntt);
  std::vector<u64> tmp(ctx.degree());
  for (std::size_t j = 0; j < level; ++j) {
    auto digit = c2.limb(j);
    for (std::size_t t = 0; t < ext; ++t) {
      const bool is_special = (t == level);
      const PrimeModulus& q = is_special ? ctx.special() : ctx.modulus(t);
      const NttTables& table = is_special ? ctx.special_table() : ctx.chain_tables()[t];
      for (u32 n = 0; n < ctx.degree(); ++n) {
        tmp[n] = digit[n] < q.value ? digit[n] : barrett_reduce_128(digit[n], 0, q);
      }
      detail::ntt_forward_limb(tmp, table);
      const std::size_t key_idx = is_special ? key_special_idx : t;
      auto k0 = rk.parts[j][0].limb(key_idx);
      auto k1 = rk.parts[j][1].limb(key_idx);
      auto a0 = acc0.limb(t);
      auto a1 = acc1.limb(t);
      for (u32 n = 0; n < ctx.degree(); ++n) {
        a0[n] = mod_add(a0[n], mod_mul(tmp[n], k0[n], q), q);
        a1[n] = mod_add(a1[n], mod_mul(tmp[n], k1[n], q), q);
      }
    }
  }

  // Divide the special prime back out of both accumulators.
  std::vector<PrimeModulus> ext_moduli = detail::chain_moduli(ctx, level);
  ext_moduli.push_back(ctx.special());
  Ciphertext out;
  out.scale = ct.scale;
  out.packing = ct.packing;
  out.slots = ct.slots;
  for (RingElement* acc : {&acc0, &acc1}) {
    for (std::size_t i = 0; i < ext; ++i) {
      detail::ntt_inverse_limb(acc->limb(i), i == level ? ctx.special_table()
                                                        : ctx.chain_tables()[i]);
    }
    acc->set_domain(PolyDomain::Coefficient);
    detail::divide_round_last(*acc, ext_moduli);
    ntt_forward(*acc, ctx.chain_tables(level));
  }
  detail::add_inplace(ctx, acc0, ct.polys[0]);
  detail::add_inplace(ctx, acc1, ct.polys[1]);
  out.polys.push_back(std::move(acc0));
  out.polys.push_back(std::move(acc1));
  return out;
}

/// Rescale to a lower level: per dropped limb, round-divide by that modulus
/// (inverse NTT, divide, forward NTT -- the NTT form is incompatible with the
/// division) and divide the scale bookkeeping by the same prime.
inline Ciphertext rescale(const CkksContext& ctx, const Ciphertext& ct, std::size_t target_level) {
  require(ct.level() >= 2, "cannot rescale below level 1");
  require(target_level >= 1 && target_level < ct.level(), "bad rescale target");
  Ciphertext out = ct;
  while (out.level() > target_level) {
    const std::size_t lvl = out.level();
    auto moduli = detail::chain_moduli(ctx, lvl);
    for (auto& poly : out.polys) {
      ntt_inverse(poly, ctx.chain_tables(lvl));
      detail::divide_round_last(poly, moduli);
      ntt_forward(poly, ctx.chain_tables(lvl - 1));
    }
    out.scale /= static_cast<double>(moduli.back().value);
  }
  return out;
}

inline Ciphertext rescale_next(const CkksContext& ctx, const Ciphertext& ct) {
  require(ct.level() >= 2, "cannot rescale below level 1");
  return rescale(ctx, ct, ct.level() - 1);
}

}  // namespace henet
