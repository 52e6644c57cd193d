#pragma once

// Reference implementations used only by tests. Deliberately naive and
// independent of the library's tables and elimination order.

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "ncrel/bytes.hpp"

namespace oracle {

/// Carry-less multiply, then reduce by x^8 + x^4 + x^3 + x^2 + 1.
inline std::uint8_t gf_mul(std::uint8_t a, std::uint8_t b) {
  std::uint16_t prod = 0;
  for (int i = 0; i < 8; ++i)
    if (b & (1u << i)) prod ^= static_cast<std::uint16_t>(a) << i;
  for (int bit = 15; bit >= 8; --bit)
    if (prod & (1u << bit)) prod ^= static_cast<std::uint16_t>(0x11D << (bit - 8));
  return static_cast<std::uint8_t>(prod);
}

inline std::uint8_t gf_inv(std::uint8_t a) {
  for (unsigned b = 1; b < 256; ++b)
    if (gf_mul(a, static_cast<std::uint8_t>(b)) == 1) return static_cast<std::uint8_t>(b);
  return 0;
}

using Matrix = std::vector<std::vector<std::uint8_t>>;

/// Solves C * X = Y for X with plain Gaussian elimination and back
/// substitution, using the first rows that form a basis. nullopt when the
/// received rows do not have full column rank.
inline std::optional<Matrix> batch_solve(const Matrix& coeffs, const Matrix& payloads) {
  if (coeffs.empty()) return std::nullopt;
  const std::size_t n = coeffs[0].size();
  const std::size_t w = payloads[0].size();
  Matrix a;
  for (std::size_t i = 0; i < coeffs.size(); ++i) {
    auto row = coeffs[i];
    row.insert(row.end(), payloads[i].begin(), payloads[i].end());
    a.push_back(std::move(row));
  }
  std::size_t r = 0;
  std::vector<std::size_t> pivot_col;
  for (std::size_t c = 0; c < n && r < a.size(); ++c) {
    std::size_t p = r;
    while (p < a.size() && a[p][c] == 0) ++p;
    if (p == a.size()) continue;
    std::swap(a[p], a[r]);
    for (std::size_t i = r + 1; i < a.size(); ++i) {
      if (a[i][c] == 0) continue;
      const auto f = gf_mul(a[i][c], gf_inv(a[r][c]));
      for (std::size_t k = c; k < n + w; ++k) a[i][k] ^= gf_mul(f, a[r][k]);
    }
    pivot_col.push_back(c);
    ++r;
  }
  if (r < n) return std::nullopt;
  // Back substitution on the upper-triangular n x n system.
  Matrix x(n, std::vector<std::uint8_t>(w, 0));
  for (std::size_t i = n; i-- > 0;) {
    std::vector<std::uint8_t> acc(a[i].begin() + static_cast<std::ptrdiff_t>(n), a[i].end());
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t k = 0; k < w; ++k) acc[k] ^= gf_mul(a[i][j], x[j][k]);
    const auto inv = gf_inv(a[i][i]);
    for (std::size_t k = 0; k < w; ++k) x[i][k] = gf_mul(inv, acc[k]);
  }
  return x;
}

/// Σ coeff[x] * segment[x]
inline std::vector<std::uint8_t> combine(const std::vector<std::uint8_t>& coeffs, const Matrix& segments) {
  std::vector<std::uint8_t> out(segments.at(0).size(), 0);
  for (std::size_t x = 0; x < coeffs.size(); ++x)
    for (std::size_t k = 0; k < out.size(); ++k) out[k] ^= gf_mul(coeffs[x], segments[x][k]);
  return out;
}

/// IPv4-looking packet of `len` bytes with random content.
inline ncrel::Bytes ip_packet(std::mt19937_64& rng, std::size_t len) {
  ncrel::Bytes p(len);
  for (auto& b : p) b = static_cast<std::uint8_t>(rng());
  p[0] = 0x45;
  p[2] = static_cast<std::uint8_t>(len >> 8);
  p[3] = static_cast<std::uint8_t>(len);
  return p;
}

inline std::vector<ncrel::Bytes> packet_list(std::mt19937_64& rng, std::size_t count, std::size_t min_len,
                                             std::size_t max_len) {
  std::vector<ncrel::Bytes> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(ip_packet(rng, min_len + rng() % (max_len - min_len + 1)));
  return out;
}

}  // namespace oracle
