// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <fstream>

#include "henet/ckks.hpp"

namespace henet {

// ---------------------------------------------------------------------------
// Wire format, shared by files and the protocol. Header:
//   magic "NGH2" | version u8 | N u32 | level u8 | packing u8 |
//   scale (IEEE-754 double bits, u64) | poly_count u8 | moduli (level x u64)
// followed by the residues as little-endian u64 words, modulus-major then
// coefficient order, NTT domain.
// ---------------------------------------------------------------------------

constexpr char kWireMagic[4] = {'N', 'G', 'H', '2'};
constexpr u8 kWireVersion = 1;

namespace detail {

inline void put_header(std::vector<u8>& out, u32 degree, std::size_t level, u8 packing,
                       double scale, std::size_t poly_count, std::span<const u64> moduli) {
  out.insert(out.end(), kWireMagic, kWireMagic + 4);
  put_u8(out, kWireVersion);
  put_u32(out, degree);
  put_u8(out, static_cast<u8>(level));
  put_u8(out, packing);
  put_u64(out, std::bit_cast<u64>(scale));
  put_u8(out, static_cast<u8>(poly_count));
  for (u64 q : moduli) put_u64(out, q);
}

struct WireHeader {
  u32 degree;
  std::size_t level;
  u8 packing;
  double scale;
  std::size_t poly_count;
  std::vector<u64> moduli;
};

inline WireHeader get_header(ByteReader& in) {
  const u8* magic = in.take(4);
  if (std::memcmp(magic, kWireMagic, 4) != 0) throw ValidationError("bad magic");
  if (in.get_u8() != kWireVersion) throw ValidationError("unsupported wire version");
  WireHeader h;
  h.degree = in.get_u32();
  h.level = in.get_u8();
  h.packing = in.get_u8();
  h.scale = std::bit_cast<double>(in.get_u64());
  h.poly_count = in.get_u8();
  h.moduli.resize(h.level);
  for (auto& q : h.moduli) q = in.get_u64();
  return h;
}

inline void put_poly_words(std::vector<u8>& out, const RingElement& poly) {
  for (u64 w : poly.words()) put_u64(out, w);
}

inline RingElement get_poly_words(ByteReader& in, u32 degree, std::size_t level,
                                  std::span<const u64> moduli) {
  RingElement poly(degree, level, PolyDomain::Ntt);
  for (std::size_t i = 0; i < level; ++i) {
    auto limb = poly.limb(i);
    for (u32 n = 0; n < degree; ++n) {
      u64 w = in.get_u64();
      if (w >= moduli[i]) throw ValidationError("residue out of range");
      limb[n] = w;
    }
  }
  return poly;
}

inline std::vector<u64> chain_values(const CkksContext& ctx, std::size_t level) {
  std::vector<u64> v(level);
  for (std::size_t i = 0; i < level; ++i) v[i] = ctx.modulus(i).value;
  return v;
}

inline void check_moduli_prefix(const CkksContext& ctx, const WireHeader& h) {
  require(h.degree == ctx.degree(), "degree does not match the context");
  require(h.level >= 1 && h.level <= ctx.chain_length(), "level outside the context chain");
  for (std::size_t i = 0; i < h.level; ++i) {
    require(h.moduli[i] == ctx.modulus(i).value, "modulus list does not match the context");
  }
}

}  // namespace detail

inline std::vector<u8> serialize_ciphertext(const CkksContext& ctx, const Ciphertext& ct) {
  std::vector<u8> out;
  const std::size_t level = ct.level();
  out.reserve(24 + level * 8 + ct.size() * level * ctx.degree() * 8);
  detail::put_header(out, ctx.degree(), level, static_cast<u8>(ct.packing), ct.scale, ct.size(),
                     detail::chain_values(ctx, level));
  for (const auto& poly : ct.polys) detail::put_poly_words(out, poly);
  return out;
}

inline Ciphertext deserialize_ciphertext(const CkksContext& ctx, ByteReader& in) {
  auto h = detail::get_header(in);
  detail::check_moduli_prefix(ctx, h);
  require(h.poly_count == 2 || h.poly_count == 3, "ciphertext must have 2 or 3 polynomials");
  require(h.packing <= 1, "unknown packing mode");
  require(h.scale > 0.0, "scale must be positive");
  Ciphertext ct;
  ct.scale = h.scale;
  ct.packing = static_cast<PackingMode>(h.packing);
  ct.slots = ctx.slot_count();
  for (std::size_t k = 0; k < h.poly_count; ++k) {
    ct.polys.push_back(detail::get_poly_words(in, h.degree, h.level, h.moduli));
  }
  return ct;
}

inline Ciphertext deserialize_ciphertext(const CkksContext& ctx, const std::vector<u8>& bytes) {
  ByteReader in(bytes);
  return deserialize_ciphertext(ctx, in);
}

// Key files reuse the header; the modulus list spans the full basis with the
// special prime last, and poly_count counts the stored polynomials.

inline std::vector<u8> serialize_secret_key(const CkksContext& ctx, const SecretKey& sk) {
  std::vector<u8> out;
  auto moduli = detail::chain_values(ctx, ctx.chain_length());
  if (ctx.has_special()) moduli.push_back(ctx.special().value);
  detail::put_header(out, ctx.degree(), moduli.size(), 0, 1.0, 1, moduli);
  detail::put_poly_words(out, sk.s);
  return out;
}

inline SecretKey deserialize_secret_key(const CkksContext& ctx, const std::vector<u8>& bytes) {
  ByteReader in(bytes);
  auto h = detail::get_header(in);
  require(h.degree == ctx.degree(), "degree does not match the context");
  require(h.poly_count == 1, "malformed secret key");
  const std::size_t full = ctx.chain_length() + (ctx.has_special() ? 1 : 0);
  require(h.level == full, "secret key basis does not match the context");
  return SecretKey{detail::get_poly_words(in, h.degree, h.level, h.moduli)};
}

inline std::vector<u8> serialize_relin_key(const CkksContext& ctx, const RelinKey& rk) {
  std::vector<u8> out;
  auto moduli = detail::chain_values(ctx, ctx.chain_length());
  moduli.push_back(ctx.special().value);
  detail::put_header(out, ctx.degree(), moduli.size(), 0, 1.0, 2 * rk.parts.size(), moduli);
  for (const auto& part : rk.parts) {
    detail::put_poly_words(out, part[0]);
    detail::put_poly_words(out, part[1]);
  }
  return out;
}

inline RelinKey deserialize_relin_key(const CkksContext& ctx, const std::vector<u8>& bytes) {
  ByteReader in(bytes);
  auto h = detail::get_header(in);
  require(h.degree == ctx.degree(), "degree does not match the context");
  require(h.poly_count == 2 * ctx.chain_length(), "malformed relinearization key");
  RelinKey rk;
  for (std::size_t j = 0; j < ctx.chain_length(); ++j) {
    RingElement c0 = detail::get_poly_words(in, h.degree, h.level, h.moduli);
    RingElement c1 = detail::get_poly_words(in, h.degree, h.level, h.moduli);
    rk.parts.push_back({std::move(c0), std::move(c1)});
  }
  return rk;
}

// ---------------------------------------------------------------------------
// Small file helpers used by the CLI and tests.
// ---------------------------------------------------------------------------

inline void write_file(const std::string& path, std::span<const u8> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ValidationError("write failed: " + path);
}

inline std::vector<u8> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw ValidationError("cannot open: " + path);
  std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<u8> bytes(static_cast<std::size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw ValidationError("read failed: " + path);
  return bytes;
}

}  // namespace henet
