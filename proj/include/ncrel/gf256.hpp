#pragma once

// GF(2^8) arithmetic with reduction polynomial x^8 + x^4 + x^3 + x^2 + 1 (0x11D).
// Tables are built at compile time; 0x02 generates the multiplicative group.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>

#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
#include <immintrin.h>
#define NCREL_GF256_X86 1
#endif

namespace ncrel::gf256 {

using Element = std::uint8_t;

inline constexpr unsigned kPolynomial = 0x11D;

namespace detail {

struct Tables {
  std::array<Element, 512> exp{};
  std::array<std::uint8_t, 256> log{};
  std::array<Element, 256> inv{};
  // mul[a][b]; row a is the scaling table used by axpy
  std::array<std::array<Element, 256>, 256> mul{};
  // c * (low nibble) and c * (high nibble << 4), for shuffle-based kernels
  std::array<std::array<Element, 16>, 256> nib_lo{};
  std::array<std::array<Element, 16>, 256> nib_hi{};
};

constexpr Tables build_tables() {
  Tables t{};
  unsigned x = 1;
  for (unsigned i = 0; i < 255; ++i) {
    t.exp[i] = static_cast<Element>(x);
    t.exp[i + 255] = static_cast<Element>(x);
    t.log[x] = static_cast<std::uint8_t>(i);
    x <<= 1;
    if (x & 0x100) x ^= kPolynomial;
  }
  t.exp[510] = t.exp[0];
  t.exp[511] = t.exp[1];
  for (unsigned a = 1; a < 256; ++a) {
    t.inv[a] = t.exp[255 - t.log[a]];
    for (unsigned b = 1; b < 256; ++b) t.mul[a][b] = t.exp[t.log[a] + t.log[b]];
  }
  for (unsigned a = 0; a < 256; ++a) {
    for (unsigned n = 0; n < 16; ++n) {
      t.nib_lo[a][n] = t.mul[a][n];
      t.nib_hi[a][n] = t.mul[a][n << 4];
    }
  }
  return t;
}

inline constexpr Tables kTables = build_tables();

#ifdef NCREL_GF256_X86
__attribute__((target("avx2"))) inline std::size_t axpy_avx2(Element* dst, const Element* src, std::size_t n,
                                                             Element c) {
  const __m256i lo = _mm256_broadcastsi128_si256(
      _mm_loadu_si128(reinterpret_cast<const __m128i*>(kTables.nib_lo[c].data())));
  const __m256i hi = _mm256_broadcastsi128_si256(
      _mm_loadu_si128(reinterpret_cast<const __m128i*>(kTables.nib_hi[c].data())));
  const __m256i mask = _mm256_set1_epi8(0x0F);
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    const __m256i s = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(src + i));
    const __m256i pl = _mm256_shuffle_epi8(lo, _mm256_and_si256(s, mask));
    const __m256i ph = _mm256_shuffle_epi8(hi, _mm256_and_si256(_mm256_srli_epi64(s, 4), mask));
    __m256i d = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(dst + i));
    d = _mm256_xor_si256(d, _mm256_xor_si256(pl, ph));
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(dst + i), d);
  }
  return i;
}

inline bool has_avx2() {
  static const bool v = __builtin_cpu_supports("avx2");
  return v;
}
#endif

}  // namespace detail

constexpr Element add(Element a, Element b) noexcept { return a ^ b; }
constexpr Element sub(Element a, Element b) noexcept { return a ^ b; }

constexpr Element mul(Element a, Element b) noexcept { return detail::kTables.mul[a][b]; }

/// Multiplicative inverse. Throws std::domain_error for zero.
constexpr Element inv(Element a) {
  if (a == 0) throw std::domain_error("gf256::inv: zero has no inverse");
  return detail::kTables.inv[a];
}

constexpr Element div(Element a, Element b) { return mul(a, inv(b)); }

/// dst[i] += c * src[i]
inline void axpy(std::span<Element> dst, std::span<const Element> src, Element c) {
  if (dst.size() != src.size()) throw std::invalid_argument("gf256::axpy: length mismatch");
  if (c == 0) return;
  if (c == 1) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] ^= src[i];
    return;
  }
  std::size_t i = 0;
#ifdef NCREL_GF256_X86
  if (dst.size() >= 32 && detail::has_avx2()) i = detail::axpy_avx2(dst.data(), src.data(), dst.size(), c);
#endif
  const auto& row = detail::kTables.mul[c];
  for (; i < dst.size(); ++i) dst[i] ^= row[src[i]];
}

/// v[i] = c * v[i]
inline void scale(std::span<Element> v, Element c) noexcept {
  if (c == 1) return;
  const auto& row = detail::kTables.mul[c];
  for (auto& x : v) x = row[x];
}

}  // namespace ncrel::gf256
