// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <complex>

#include "henet/params.hpp"

namespace henet {

enum class PackingMode : u8 { Real = 0, Complex = 1 };

inline const char* packing_name(PackingMode m) {
  return m == PackingMode::Real ? "real" : "complex";
}

inline PackingMode packing_from_name(const std::string& name) {
  if (name == "real") return PackingMode::Real;
  if (name == "complex") return PackingMode::Complex;
  throw ValidationError("unknown packing mode: " + name);
}

/// Batch capacity in independent real values for a packing mode.
inline u32 batch_capacity(const CkksContext& ctx, PackingMode packing) {
  return packing == PackingMode::Real ? ctx.slot_count() : 2 * ctx.slot_count();
}

// ---------------------------------------------------------------------------
// Plaintexts. PackedPlaintext is a full double-CRT polynomial (level * N
// words). ScalarPlaintext is the O(L) form: one residue [round(c*s)]_{p_i}
// per chain modulus -- exactly `level` words, never N * level.
// ---------------------------------------------------------------------------

struct PackedPlaintext {
  RingElement poly;  // NTT domain
  double scale = 0.0;

  std::size_t level() const { return poly.level(); }
};

struct ScalarPlaintext {
  std::vector<u64> residues;  // residues[i] < p_i
  double scale = 0.0;

  std::size_t level() const { return residues.size(); }
};

// ---------------------------------------------------------------------------
// CleartextBatch: up to N/2 reals (Real packing) or up to N reals packed two
// per slot as a+bi (Complex packing, first half real parts / second half
// imaginary parts).
// ---------------------------------------------------------------------------

struct CleartextBatch {
  PackingMode packing = PackingMode::Real;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

inline CleartextBatch pack_real(std::vector<double> values) {
  return CleartextBatch{PackingMode::Real, std::move(values)};
}

/// Pairs (x_j, x_{j+k}) -> slot x_j + i*x_{j+k}, for 2k input reals.
inline CleartextBatch pack_complex(std::vector<double> values) {
  require(values.size() % 2 == 0, "complex packing needs an even number of values");
  return CleartextBatch{PackingMode::Complex, std::move(values)};
}

inline std::vector<std::complex<double>> batch_to_slots(const CkksContext& ctx,
                                                        const CleartextBatch& batch) {
  require(batch.size() <= batch_capacity(ctx, batch.packing), "batch exceeds slot capacity");
  std::vector<std::complex<double>> slots;
  if (batch.packing == PackingMode::Real) {
    slots.reserve(batch.size());
    for (double v : batch.values) slots.emplace_back(v, 0.0);
  } else {
    std::size_t k = batch.size() / 2;
    slots.reserve(k);
    for (std::size_t j = 0; j < k; ++j) {
      slots.emplace_back(batch.values[j], batch.values[j + k]);
    }
  }
  return slots;
}

inline CleartextBatch slots_to_batch(std::span<const std::complex<double>> slots,
                                     PackingMode packing, std::size_t count) {
  CleartextBatch out;
  out.packing = packing;
  out.values.resize(count);
  if (packing == PackingMode::Real) {
    require(count <= slots.size(), "batch larger than decoded slots");
    for (std::size_t j = 0; j < count; ++j) out.values[j] = slots[j].real();
  } else {
    require(count % 2 == 0, "complex batch size must be even");
    std::size_t k = count / 2;
    require(k <= slots.size(), "batch larger than decoded slots");
    for (std::size_t j = 0; j < k; ++j) {
      out.values[j] = slots[j].real();
      out.values[j + k] = slots[j].imag();
    }
  }
  return out;
}

inline std::vector<double> unpack_complex(const CleartextBatch& batch) {
  require(batch.packing == PackingMode::Complex, "batch is not complex-packed");
  return batch.values;
}

// ---------------------------------------------------------------------------
// Encoding. Both paths share round_scaled(), so the scalar encoder and the
// general encoder of a constant vector round through identical expressions
// and land on identical residues.
// ---------------------------------------------------------------------------

namespace detail {

inline i128 round_scaled(long double scaled) {
  require(std::fabs(static_cast<double>(scaled)) < std::ldexp(1.0, 100),
          "scaled magnitude too large to encode");
  return static_cast<i128>(std::roundl(scaled));
}

inline u64 residue_from_i128(i128 x, const PrimeModulus& q) {
  i128 r = x % static_cast<i128>(q.value);
  if (r < 0) r += static_cast<i128>(q.value);
  return static_cast<u64>(r);
}

inline void check_encode_magnitude(const CkksContext& ctx, long double max_scaled,
                                   std::size_t level) {
  require(max_scaled < ctx.modulus_product(level) / 2.0L,
          "scaled magnitude exceeds q_level/2");
}

}  // namespace detail

/// General CKKS encoding: conjugate-extend, inverse DFT, scale, round, reduce
/// per modulus, negacyclic NTT.
inline PackedPlaintext encode_vector(const CkksContext& ctx,
                                     std::span<const std::complex<double>> slots,
                                     std::size_t level, double scale) {
  require(level >= 1 && level <= ctx.chain_length(), "encode level out of range");
  require(scale > 0.0, "scale must be positive");
  require(slots.size() <= ctx.slot_count(), "more slots than the parameters provide");

  std::vector<double> coeffs = ctx.embedding().slots_to_coeffs(slots);

  const u32 n = ctx.degree();
  std::vector<i128> rounded(n);
  long double max_scaled = 0.0L;
  for (u32 k = 0; k < n; ++k) {
    long double scaled = static_cast<long double>(coeffs[k]) * static_cast<long double>(scale);
    max_scaled = std::max(max_scaled, scaled < 0.0L ? -scaled : scaled);
    rounded[k] = detail::round_scaled(scaled);
  }
  detail::check_encode_magnitude(ctx, max_scaled, level);

  RingElement poly(n, level, PolyDomain::Coefficient);
  for (std::size_t i = 0; i < level; ++i) {
    auto limb = poly.limb(i);
    const PrimeModulus& q = ctx.modulus(i);
    for (u32 k = 0; k < n; ++k) limb[k] = detail::residue_from_i128(rounded[k], q);
  }
  ntt_forward(poly, ctx.chain_tables(level));
  return PackedPlaintext{std::move(poly), scale};
}

inline PackedPlaintext encode_batch(const CkksContext& ctx, const CleartextBatch& batch,
                                    std::size_t level, double scale) {
  auto slots = batch_to_slots(ctx, batch);
  return encode_vector(ctx, slots, level, scale);
}

/// Scalar encoding: y = [round(c*s)]_{p_i} per chain modulus, O(level) words.
inline ScalarPlaintext encode_scalar(const CkksContext& ctx, double value, std::size_t level,
                                     double scale) {
  require(level >= 1 && level <= ctx.chain_length(), "encode level out of range");
  require(scale > 0.0, "scale must be positive");
  long double scaled = static_cast<long double>(value) * static_cast<long double>(scale);
  // The scalar form is a pure residue: anything below q_level still has a
  // well-defined wrap, so only a full-modulus overflow is rejected.
  require((scaled < 0.0L ? -scaled : scaled) < ctx.modulus_product(level),
          "scaled magnitude exceeds q_level");
  i128 x = detail::round_scaled(scaled);
  ScalarPlaintext pt;
  pt.scale = scale;
  pt.residues.resize(level);
  for (std::size_t i = 0; i < level; ++i) {
    pt.residues[i] = detail::residue_from_i128(x, ctx.modulus(i));
  }
  return pt;
}

/// Broadcast constant for additions. Under real packing this is just the
/// expanded scalar form. Under complex packing an added constant must reach
/// both batch samples in a slot, so the slots carry v + vi; that needs the
/// general encoder (complex packing gives up the scalar-encoding shortcut
/// for additions).
inline PackedPlaintext encode_constant_packed(const CkksContext& ctx, double value,
                                              PackingMode packing, std::size_t level,
                                              double scale);

/// Expands the scalar form to the full packed form it abbreviates: a constant
/// polynomial, whose NTT representation holds the same residue in every slot.
inline PackedPlaintext expand_scalar(const CkksContext& ctx, const ScalarPlaintext& pt) {
  const std::size_t level = pt.level();
  require(level >= 1 && level <= ctx.chain_length(), "scalar plaintext level out of range");
  RingElement poly(ctx.degree(), level, PolyDomain::Ntt);
  for (std::size_t i = 0; i < level; ++i) {
    auto limb = poly.limb(i);
    std::fill(limb.begin(), limb.end(), pt.residues[i]);
  }
  return PackedPlaintext{std::move(poly), pt.scale};
}

/// Inverse of encode_vector: inverse NTT, CRT-recompose to signed integers,
/// divide by the scale, forward DFT back to slot values.
inline std::vector<std::complex<double>> decode_slots(const CkksContext& ctx,
                                                      const PackedPlaintext& pt) {
  const std::size_t level = pt.level();
  require(level >= 1 && level <= ctx.chain_length(), "plaintext level out of range");
  RingElement poly = pt.poly;
  ntt_inverse(poly, ctx.chain_tables(level));

  // CRT setup: Q_i = q_level / p_i built as explicit products, plus the
  // matching inverses. Garner-free: acc = sum y_i * Q_i, reduced mod q_level.
  detail::WideUint big_q(1);
  for (std::size_t i = 0; i < level; ++i) big_q.mul_small(ctx.modulus(i).value);
  detail::WideUint q_half = big_q;
  q_half.shift_right_one();

  std::vector<detail::WideUint> q_over_p(level, detail::WideUint(1));
  std::vector<u64> inv(level);
  for (std::size_t i = 0; i < level; ++i) {
    for (std::size_t j = 0; j < level; ++j) {
      if (j != i) q_over_p[i].mul_small(ctx.modulus(j).value);
    }
    inv[i] = mod_inv(q_over_p[i].mod_u64(ctx.modulus(i)), ctx.modulus(i));
  }

  const u32 n = ctx.degree();
  std::vector<double> coeffs(n);
  const long double inv_scale = 1.0L / static_cast<long double>(pt.scale);
  for (u32 k = 0; k < n; ++k) {
    detail::WideUint acc(0);
    for (std::size_t i = 0; i < level; ++i) {
      u64 y = mod_mul(poly.limb(i)[k], inv[i], ctx.modulus(i));
      detail::WideUint term = q_over_p[i];
      term.mul_small(y);
      acc.add(term);
    }
    while (acc.compare(big_q) >= 0) acc.sub(big_q);
    if (acc.compare(q_half) > 0) {
      detail::WideUint neg = big_q;
      neg.sub(acc);
      coeffs[k] = static_cast<double>(-neg.to_long_double() * inv_scale);
    } else {
      coeffs[k] = static_cast<double>(acc.to_long_double() * inv_scale);
    }
  }
  return ctx.embedding().coeffs_to_slots(coeffs);
}

inline CleartextBatch decode_batch(const CkksContext& ctx, const PackedPlaintext& pt,
                                   PackingMode packing, std::size_t count) {
  auto slots = decode_slots(ctx, pt);
  return slots_to_batch(slots, packing, count);
}

inline PackedPlaintext encode_constant_packed(const CkksContext& ctx, double value,
                                              PackingMode packing, std::size_t level,
                                              double scale) {
  if (packing == PackingMode::Real) {
    return expand_scalar(ctx, encode_scalar(ctx, value, level, scale));
  }
  std::vector<std::complex<double>> slots(ctx.slot_count(), {value, value});
  return encode_vector(ctx, slots, level, scale);
}

}  // namespace henet
