// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "henet/common.hpp"

namespace henet {

// ---------------------------------------------------------------------------
// Canonical embedding for degree-N negacyclic rings. Slot j of a real
// polynomial p is its evaluation at zeta^(2j+1), zeta = exp(i*pi/N), so that
// slot-wise products correspond to products mod X^N + 1. Evaluation at the
// odd zeta powers factors into a twist by zeta^k followed by a length-N DFT,
// which is what makes the O(N log N) path below work.
//
// The radix-2 butterflies are exact on constant inputs: a vector with the
// same real number in every slot transforms to (r, 0, ..., 0) with no
// floating-point error, which the scalar-encoding equivalence relies on.
// ---------------------------------------------------------------------------

class EmbeddingTransform {
 public:
  using Cplx = std::complex<double>;

  explicit EmbeddingTransform(u32 degree) : n_(degree) {
    require(is_power_of_two(degree) && degree >= 2, "embedding degree must be a power of two");
    log_n_ = log2_exact(degree);
    const double pi = std::acos(-1.0);
    dft_roots_.resize(n_ / 2);
    for (u32 k = 0; k < n_ / 2; ++k) {
      double ang = -2.0 * pi * k / n_;
      dft_roots_[k] = Cplx(std::cos(ang), std::sin(ang));
    }
    twist_.resize(n_);
    for (u32 k = 0; k < n_; ++k) {
      double ang = pi * k / n_;
      twist_[k] = Cplx(std::cos(ang), std::sin(ang));
    }
    bitrev_.resize(n_);
    for (u32 i = 0; i < n_; ++i) {
      u32 r = 0;
      for (u32 b = 0; b < log_n_; ++b) r = (r << 1) | ((i >> b) & 1);
      bitrev_[i] = r;
    }
  }

  u32 degree() const { return n_; }
  u32 slot_count() const { return n_ / 2; }

  /// Slots -> real coefficients (inverse embedding). Input is conjugate-
  /// extended internally; the output polynomial is real.
  std::vector<double> slots_to_coeffs(std::span<const Cplx> slots) const {
    require(slots.size() <= n_ / 2, "too many slots");
    std::vector<Cplx> e(n_, Cplx(0.0, 0.0));
    for (std::size_t j = 0; j < slots.size(); ++j) {
      e[j] = slots[j];
      e[n_ - 1 - j] = std::conj(slots[j]);
    }
    dft_inplace(e);
    std::vector<double> coeffs(n_);
    const double inv_n = 1.0 / static_cast<double>(n_);
    for (u32 k = 0; k < n_; ++k) {
      // Untwist by zeta^-k; the imaginary part cancels for conjugate-
      // symmetric inputs and is dropped.
      Cplx v = e[k] * std::conj(twist_[k]);
      coeffs[k] = v.real() * inv_n;
    }
    return coeffs;
  }

  /// Real coefficients -> slots (forward embedding).
  std::vector<Cplx> coeffs_to_slots(std::span<const double> coeffs) const {
    require(coeffs.size() == n_, "coefficient count must equal the degree");
    std::vector<Cplx> y(n_);
    for (u32 k = 0; k < n_; ++k) y[k] = std::conj(twist_[k] * coeffs[k]);
    dft_inplace(y);
    std::vector<Cplx> slots(n_ / 2);
    for (u32 j = 0; j < n_ / 2; ++j) slots[j] = std::conj(y[j]);
    return slots;
  }

 private:
  void dft_inplace(std::vector<Cplx>& a) const {
    for (u32 i = 0; i < n_; ++i) {
      u32 r = bitrev_[i];
      if (i < r) std::swap(a[i], a[r]);
    }
    for (u32 len = 2; len <= n_; len <<= 1) {
      u32 step = n_ / len;
      for (u32 base = 0; base < n_; base += len) {
        for (u32 k = 0; k < len / 2; ++k) {
          Cplx w = dft_roots_[k * step];
          Cplx u = a[base + k];
          Cplx v = a[base + k + len / 2] * w;
          a[base + k] = u + v;
          a[base + k + len / 2] = u - v;
        }
      }
    }
  }

  u32 n_;
  u32 log_n_ = 0;
  std::vector<Cplx> dft_roots_;
  std::vector<Cplx> twist_;
  std::vector<u32> bitrev_;
};

}  // namespace henet
