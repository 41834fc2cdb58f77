// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <memory>
#include <string>

#include "henet/fft.hpp"
#include "henet/modmath.hpp"

namespace henet {

// ---------------------------------------------------------------------------
// Encryption parameters and the fixed presets. Prime chains are pinned
// constants (not searched at runtime) so that key files, ciphertexts and test
// vectors are stable. Every prime is congruent to 1 mod 2N. The security
// label is carried as metadata only.
// ---------------------------------------------------------------------------

struct EncryptionParameters {
  u32 poly_degree = 0;
  RnsBasis basis;
  double default_scale = 0.0;
  int security_label = 128;

  EncryptionParameters() = default;

  EncryptionParameters(u32 n, std::vector<u64> chain, std::optional<u64> special_prime,
                       double scale, int security = 128)
      : poly_degree(n), default_scale(scale), security_label(security) {
    require(is_power_of_two(n), "poly degree must be a power of two");
    require(!chain.empty(), "modulus chain must be non-empty");
    require(scale > 0.0, "scale must be positive");
    std::vector<PrimeModulus> moduli;
    moduli.reserve(chain.size());
    for (u64 q : chain) moduli.emplace_back(q);
    std::optional<PrimeModulus> sp;
    if (special_prime) sp = PrimeModulus(*special_prime);
    basis = RnsBasis(std::move(moduli), std::move(sp));
    u64 order = 2ull * n;
    for (const auto& q : basis.moduli) {
      require((q.value - 1) % order == 0, "chain modulus is not 1 mod 2N");
      require(scale <= static_cast<double>(q.value), "scale exceeds a chain modulus");
    }
    if (basis.special) {
      require((basis.special->value - 1) % order == 0, "special prime is not 1 mod 2N");
    }
  }

  std::size_t chain_length() const { return basis.chain_length(); }
};

enum class Preset { P11, P12, P13, P14 };

inline const char* preset_name(Preset p) {
  switch (p) {
    case Preset::P11: return "P11";
    case Preset::P12: return "P12";
    case Preset::P13: return "P13";
    case Preset::P14: return "P14";
  }
  return "?";
}

inline Preset preset_from_name(const std::string& name) {
  if (name == "P11" || name == "p11") return Preset::P11;
  if (name == "P12" || name == "p12") return Preset::P12;
  if (name == "P13" || name == "p13") return Preset::P13;
  if (name == "P14" || name == "p14") return Preset::P14;
  throw ValidationError("unknown preset: " + name);
}

inline EncryptionParameters make_parameters(Preset preset) {
  switch (preset) {
    case Preset::P11:
      // N=2^11, single 54-bit modulus, no special prime. Pairs with the
      // client-aided setting where every linear layer is depth 1.
      return EncryptionParameters(2048, {18014398509404161ull}, std::nullopt,
                                  std::ldexp(1.0, 24));
    case Preset::P12:
      // N=2^12, three ~2^30 moduli; small enough for the 64-bit Barrett
      // multiply path, plus a 41-bit key-switching prime.
      return EncryptionParameters(4096, {1073750017ull, 1073815553ull, 1073872897ull},
                                  1099511799809ull, std::ldexp(1.0, 30));
    case Preset::P13:
      // N=2^13, L=6: a 51-bit anchor plus five ~2^41 rescaling primes.
      return EncryptionParameters(8192,
                                  {1125899906990081ull, 1099511922689ull, 1099512004609ull,
                                   1099512266753ull, 1099512299521ull, 1099512365057ull},
                                  1125899907219457ull, std::ldexp(1.0, 40));
    case Preset::P14:
      // N=2^14, L=8.
      return EncryptionParameters(16384,
                                  {1125899908022273ull, 1099511922689ull, 1099512938497ull,
                                   1099514314753ull, 1099514478593ull, 1099515691009ull,
                                   1099515789313ull, 1099515985921ull},
                                  1125899908612097ull, std::ldexp(1.0, 40));
  }
  throw ValidationError("unknown preset");
}

// ---------------------------------------------------------------------------
// CkksContext: parameters plus every table derived from them (NTT tables for
// each modulus including the special prime, the embedding transform, modulus
// products per level). Immutable after construction and safe to share across
// threads.
// ---------------------------------------------------------------------------

class CkksContext {
 public:
  explicit CkksContext(EncryptionParameters params) : params_(std::move(params)), fft_(params_.poly_degree) {
    const u32 n = params_.poly_degree;
    for (auto& q : params_.basis.moduli) {
      q.ntt_root = find_ntt_root(q, n);
      tables_.emplace_back(q, n);
    }
    if (params_.basis.special) {
      params_.basis.special->ntt_root = find_ntt_root(*params_.basis.special, n);
      special_tables_ = NttTables(*params_.basis.special, n);
    }
    // q_l as long double, for overflow checks during encoding.
    long double acc = 1.0L;
    modulus_products_.push_back(acc);
    for (const auto& q : params_.basis.moduli) {
      acc *= static_cast<long double>(q.value);
      modulus_products_.push_back(acc);
    }
  }

  static std::shared_ptr<const CkksContext> create(Preset preset) {
    return std::make_shared<const CkksContext>(make_parameters(preset));
  }

  const EncryptionParameters& params() const { return params_; }
  u32 degree() const { return params_.poly_degree; }
  u32 slot_count() const { return params_.poly_degree / 2; }
  std::size_t chain_length() const { return params_.chain_length(); }
  bool has_special() const { return params_.basis.special.has_value(); }

  const PrimeModulus& modulus(std::size_t i) const { return params_.basis.moduli[i]; }
  const PrimeModulus& special() const {
    require(has_special(), "parameters carry no special prime");
    return *params_.basis.special;
  }

  std::span<const NttTables> chain_tables() const { return tables_; }
  std::span<const NttTables> chain_tables(std::size_t level) const {
    return std::span<const NttTables>(tables_.data(), level);
  }
  const NttTables& special_table() const {
    require(has_special(), "parameters carry no special prime");
    return special_tables_;
  }

  const EmbeddingTransform& embedding() const { return fft_; }

  /// Product of the first `level` chain moduli, as a long double.
  long double modulus_product(std::size_t level) const { return modulus_products_.at(level); }

 private:
  EncryptionParameters params_;
  std::vector<NttTables> tables_;
  NttTables special_tables_;
  EmbeddingTransform fft_;
  std::vector<long double> modulus_products_;
};

}  // namespace henet
