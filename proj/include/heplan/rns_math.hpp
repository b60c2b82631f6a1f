// Copyright 2026 the heplan authors
// SPDX-License-Identifier: Apache-2.0
//
// Exact small-prime RNS arithmetic for the toy verification ring: negacyclic
// NTT, centered CRT reconstruction, and rounded division. Primes here are a
// few bits wide; everything fits in unsigned 128-bit intermediates.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace heplan {

using u64 = std::uint64_t;
using u128 = unsigned __int128;
using i128 = __int128;

inline u64 mod_add(u64 a, u64 b, u64 p) { u64 s = a + b; return s >= p ? s - p : s; }
inline u64 mod_sub(u64 a, u64 b, u64 p) { return a >= b ? a - b : a + p - b; }
inline u64 mod_mul(u64 a, u64 b, u64 p) { return static_cast<u64>((u128{a} * b) % p); }

inline u64 mod_pow(u64 base, u64 exp, u64 p) {
  u64 acc = 1 % p;
  base %= p;
  while (exp) {
    if (exp & 1) acc = mod_mul(acc, base, p);
    base = mod_mul(base, base, p);
    exp >>= 1;
  }
  return acc;
}

/// Inverse modulo a prime via Fermat.
inline u64 mod_inv(u64 a, u64 p) {
  if (a % p == 0) throw std::invalid_argument("no inverse of 0");
  return mod_pow(a % p, p - 2, p);
}

/// Negacyclic NTT over Z_p[x]/(x^n + 1). Requires p ≡ 1 (mod 2n); the
/// transform bakes the psi twist into the butterfly (standard CT/GS pair).
class NegacyclicNtt {
 public:
  NegacyclicNtt(std::uint32_t degree, u64 prime) : n_(degree), p_(prime) {
    if (degree == 0 || (degree & (degree - 1)) != 0)
      throw std::invalid_argument("NTT degree must be a power of two");
    if ((prime - 1) % (2ull * degree) != 0)
      throw std::invalid_argument("prime " + std::to_string(prime) +
                                  " does not support negacyclic NTT at degree " +
                                  std::to_string(degree));
    const u64 psi = find_primitive_2n_root();
    const u64 psi_inv = mod_inv(psi, p_);
    fwd_.resize(n_);
    inv_.resize(n_);
    // powers in bit-reversed order, the usual iterative NTT table layout
    for (std::uint32_t i = 0; i < n_; ++i) {
      fwd_[i] = mod_pow(psi, bit_reverse(i), p_);
      inv_[i] = mod_pow(psi_inv, bit_reverse(i), p_);
    }
    n_inv_ = mod_inv(n_, p_);
  }

  u64 prime() const { return p_; }
  std::uint32_t degree() const { return n_; }

  void forward(std::vector<u64>& a) const {
    std::uint32_t t = n_;
    for (std::uint32_t m = 1; m < n_; m <<= 1) {
      t >>= 1;
      for (std::uint32_t i = 0; i < m; ++i) {
        const u64 s = fwd_[m + i];
        for (std::uint32_t j = i * 2 * t; j < i * 2 * t + t; ++j) {
          const u64 u = a[j];
          const u64 v = mod_mul(a[j + t], s, p_);
          a[j] = mod_add(u, v, p_);
          a[j + t] = mod_sub(u, v, p_);
        }
      }
    }
  }

  void inverse(std::vector<u64>& a) const {
    std::uint32_t t = 1;
    for (std::uint32_t m = n_; m > 1; m >>= 1) {
      const std::uint32_t h = m >> 1;
      for (std::uint32_t i = 0; i < h; ++i) {
        const u64 s = inv_[h + i];
        for (std::uint32_t j = i * 2 * t; j < i * 2 * t + t; ++j) {
          const u64 u = a[j];
          const u64 v = a[j + t];
          a[j] = mod_add(u, v, p_);
          a[j + t] = mod_mul(mod_sub(u, v, p_), s, p_);
        }
      }
      t <<= 1;
    }
    for (auto& x : a) x = mod_mul(x, n_inv_, p_);
  }

 private:
  u64 find_primitive_2n_root() const {
    // exhaustive search is fine: toy primes are tiny
    const u64 order = 2ull * n_;
    for (u64 g = 2; g < p_; ++g) {
      const u64 cand = mod_pow(g, (p_ - 1) / order, p_);
      if (mod_pow(cand, n_, p_) == p_ - 1) return cand;
    }
    throw std::runtime_error("no 2n-th root of unity found");
  }

  std::uint32_t bit_reverse(std::uint32_t v) const {
    std::uint32_t r = 0;
    for (std::uint32_t bits = n_ >> 1; bits; bits >>= 1, v >>= 1) r = (r << 1) | (v & 1);
    return r;
  }

  std::uint32_t n_;
  u64 p_;
  u64 n_inv_;
  std::vector<u64> fwd_, inv_;
};

/// Galois map x -> x^k on Z_p[x]/(x^n + 1), coefficient domain.
/// Coefficient i lands at i*k mod 2n, with a sign flip past n.
inline std::vector<u64> negacyclic_automorphism(const std::vector<u64>& a, u64 k,
                                                u64 p) {
  const std::size_t n = a.size();
  std::vector<u64> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const u64 pos = (i * k) % (2 * n);
    if (pos < n)
      out[pos] = mod_add(out[pos], a[i], p);
    else
      out[pos - n] = mod_sub(out[pos - n], a[i], p);
  }
  return out;
}

/// Slot rotation by `offset` corresponds to the automorphism power 5^offset.
inline u64 rotation_galois_power(int offset, std::uint32_t degree) {
  const u64 order = 2ull * degree;
  long long ofs = offset % static_cast<long long>(degree);
  if (ofs < 0) ofs += degree;
  u64 k = 1;
  for (long long i = 0; i < ofs; ++i) k = (k * 5) % order;
  return k;
}

/// Centered CRT: reconstruct the unique representative in (-Q/2, Q/2] from
/// residues. Products of toy primes stay far below 2^127.
class CrtBasis {
 public:
  explicit CrtBasis(std::vector<u64> primes) : primes_(std::move(primes)) {
    if (primes_.empty()) throw std::invalid_argument("empty CRT basis");
    modulus_ = 1;
    for (u64 p : primes_) modulus_ *= p;
    for (std::size_t i = 0; i < primes_.size(); ++i) {
      const u128 qi = modulus_ / primes_[i];
      const u64 qi_mod = static_cast<u64>(qi % primes_[i]);
      hats_.push_back(qi);
      hat_invs_.push_back(mod_inv(qi_mod, primes_[i]));
    }
  }

  const std::vector<u64>& primes() const { return primes_; }
  u128 modulus() const { return modulus_; }

  /// residues[i] is the value mod primes()[i].
  i128 lift_centered(const std::vector<u64>& residues) const {
    u128 acc = 0;
    for (std::size_t i = 0; i < primes_.size(); ++i) {
      const u64 t = mod_mul(residues[i], hat_invs_[i], primes_[i]);
      acc = (acc + hats_[i] % modulus_ * t) % modulus_;
    }
    i128 v = static_cast<i128>(acc);
    if (acc > modulus_ / 2) v -= static_cast<i128>(modulus_);
    return v;
  }

  static u64 reduce(i128 value, u64 p) {
    i128 r = value % static_cast<i128>(p);
    if (r < 0) r += p;
    return static_cast<u64>(r);
  }

 private:
  std::vector<u64> primes_;
  u128 modulus_;
  std::vector<u128> hats_;
  std::vector<u64> hat_invs_;
};

/// Round-half-away-from-zero division of a signed 128-bit value.
inline i128 div_round(i128 num, i128 den) {
  const bool neg = (num < 0) != (den < 0);
  u128 n = num < 0 ? static_cast<u128>(-num) : static_cast<u128>(num);
  u128 d = den < 0 ? static_cast<u128>(-den) : static_cast<u128>(den);
  u128 q = (n + d / 2) / d;
  return neg ? -static_cast<i128>(q) : static_cast<i128>(q);
}

}  // namespace heplan
