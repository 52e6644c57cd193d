#pragma once

// Per-block network coding: segmentation, ANSI X.923 padding, systematic
// RLNC encoding with seed-derived coefficients, and progressive
// Gauss-Jordan decoding.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <stop_token>
#include <string>
#include <utility>
#include <vector>

#include "ncrel/bytes.hpp"
#include "ncrel/gf256.hpp"

namespace ncrel::codec {

using Duration = std::chrono::nanoseconds;
using gf256::Element;

/// Marks a segment in which no original packet begins.
inline constexpr std::uint16_t kNoStart = 0xFFFF;

/// Smallest datagram the codec accepts: a bare IPv4 header.
inline constexpr std::size_t kMinPacketLength = 20;

/// Largest segment that still fits an IPv4 total-length field after the
/// 29-byte coded header.
inline constexpr std::size_t kMaxSegmentLength = 65535 - 29;

struct CodecParams {
  std::size_t lt = 22400;                     // buffer-list length threshold (bytes)
  Duration ti = std::chrono::seconds(1);      // buffer-list time interval
  std::size_t lm = 1400;                      // max segment length
  std::size_t nr = 120;                       // preferred number of segments
  std::size_t nk = 1;                         // redundancy rounds
  std::size_t nm = 10;                        // redundancy packets per round
  Duration tr = Duration::zero();             // pause between rounds

  void validate() const {
    if (lm < 1 || lm > kMaxSegmentLength) throw std::invalid_argument("codec: lm out of range");
    if (nr < 1 || nr > 255) throw std::invalid_argument("codec: nr must be in [1, 255]");
    if (lt < 1) throw std::invalid_argument("codec: lt must be >= 1");
    if (ti <= Duration::zero()) throw std::invalid_argument("codec: ti must be > 0");
    if (tr < Duration::zero()) throw std::invalid_argument("codec: tr must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Segmentation and padding

struct Segmentation {
  std::size_t ns = 0;  // number of segments
  std::size_t ls = 0;  // segment length

  friend bool operator==(const Segmentation&, const Segmentation&) = default;
};

/// Chooses (Ns, Ls) for a block of `lb` data bytes. One byte is reserved for
/// the padding count, so Ns * Ls >= lb + 1 always holds.
inline Segmentation compute_segmentation(std::size_t lb, std::size_t nr, std::size_t lm) {
  if (nr < 1 || lm < 1) throw std::invalid_argument("compute_segmentation: nr and lm must be >= 1");
  const std::size_t total = lb + 1;
  auto ceil_div = [](std::size_t a, std::size_t b) { return (a + b - 1) / b; };
  Segmentation s{nr, ceil_div(total, nr)};
  while (s.ls > lm) {
    ++s.ns;
    s.ls = ceil_div(total, s.ns);
  }
  return s;
}

/// ANSI X.923: zero fill, last byte holds the number of appended bytes
/// (itself included).
inline Bytes pad_block(ByteView payload, std::size_t ns, std::size_t ls) {
  const std::size_t target = ns * ls;
  if (target < payload.size() + 1) throw std::invalid_argument("pad_block: target too small");
  const std::size_t pad = target - payload.size();
  if (pad > 255) throw std::invalid_argument("pad_block: padding exceeds one count byte");
  Bytes out(payload.begin(), payload.end());
  out.resize(target, 0);
  out.back() = static_cast<std::uint8_t>(pad);
  return out;
}

inline Bytes unpad_block(ByteView padded) {
  if (padded.empty()) throw DecodeError(DecodeReason::kBadPadding, "unpad_block: empty block");
  const std::size_t n = padded.back();
  if (n < 1 || n > padded.size())
    throw DecodeError(DecodeReason::kBadPadding, "unpad_block: count byte out of range");
  return Bytes(padded.begin(), padded.end() - static_cast<std::ptrdiff_t>(n));
}

// ---------------------------------------------------------------------------
// Coefficient generation

/// Gerhard's linear congruential generator. The state lives in [0, 32749).
class GerhardPrng {
 public:
  static constexpr std::uint32_t kModulus = 32749;
  static constexpr std::uint32_t kMultiplier = 32719;
  static constexpr std::uint32_t kIncrement = 3;

  constexpr GerhardPrng() = default;
  constexpr explicit GerhardPrng(std::uint32_t seed) : a_(seed % kModulus) {}

  /// Advances the state and returns a value in [1, lim].
  constexpr std::uint32_t next(std::uint32_t lim) {
    if (lim < 1) throw std::invalid_argument("GerhardPrng: lim must be >= 1");
    a_ = (a_ * kMultiplier + kIncrement) % kModulus;
    return a_ % lim + 1;
  }

  constexpr std::uint32_t state() const noexcept { return a_; }

 private:
  std::uint32_t a_ = 1;
};

/// The state the generator maps onto itself. A coded packet seeded here
/// would get a constant coefficient vector, so seed sources skip it.
inline constexpr std::uint32_t kGerhardFixedPoint = [] {
  for (std::uint32_t a = 0; a < GerhardPrng::kModulus; ++a) {
    if ((a * GerhardPrng::kMultiplier + GerhardPrng::kIncrement) % GerhardPrng::kModulus == a) return a;
  }
  return GerhardPrng::kModulus;
}();

/// Coefficients in [1, 255] drawn from a generator started at `seed`.
inline std::vector<Element> coefficients_from_seed(std::uint16_t seed, std::size_t ns) {
  if (ns < 1) throw std::invalid_argument("coefficients_from_seed: ns must be >= 1");
  GerhardPrng prng(seed);
  std::vector<Element> c(ns);
  for (auto& x : c) x = static_cast<Element>(prng.next(255));
  return c;
}

/// Supplies the wire seed for the `coded_index`-th coded packet of block `bid`.
using SeedSource = std::function<std::uint16_t(std::uint8_t bid, std::size_t coded_index)>;

/// Default seed source: uniform draws from a seeded engine, distinct within
/// a block and never the generator's fixed point.
class RandomSeedSource {
 public:
  explicit RandomSeedSource(std::uint64_t seed) : engine_(seed) {}

  std::uint16_t operator()(std::uint8_t /*bid*/, std::size_t coded_index) {
    if (coded_index == 0) used_.clear();
    std::uniform_int_distribution<std::uint32_t> dist(0, GerhardPrng::kModulus - 1);
    for (;;) {
      const auto s = dist(engine_);
      if (s == kGerhardFixedPoint) continue;
      if (std::find(used_.begin(), used_.end(), s) != used_.end()) continue;
      used_.push_back(s);
      return static_cast<std::uint16_t>(s);
    }
  }

 private:
  std::mt19937_64 engine_;
  std::vector<std::uint32_t> used_;
};

// ---------------------------------------------------------------------------
// Blocks

struct PacketBoundary {
  std::size_t offset = 0;
  std::size_t length = 0;

  friend bool operator==(const PacketBoundary&, const PacketBoundary&) = default;
};

/// Total-length field of the IPv4-style header at `off`.
inline std::size_t ip_total_length(ByteView buf, std::size_t off) { return load_be16(buf, off + 2); }

struct CodingBlock {
  std::uint8_t tid = 0;
  std::uint8_t bid = 0;
  std::size_t ns = 0;
  std::size_t ls = 0;
  std::size_t data_length = 0;   // concatenated packet bytes before padding
  Bytes payload;                 // padded, ns * ls bytes
  std::vector<PacketBoundary> boundaries;

  ByteView segment(std::size_t i) const {
    return ByteView(payload).subspan(i * ls, ls);
  }

  /// Offset of the first packet beginning inside segment i, or kNoStart.
  std::uint16_t start_of(std::size_t i) const {
    const std::size_t lo = i * ls;
    const std::size_t hi = lo + ls;
    auto it = std::lower_bound(boundaries.begin(), boundaries.end(), lo,
                               [](const PacketBoundary& b, std::size_t v) { return b.offset < v; });
    if (it == boundaries.end() || it->offset >= hi) return kNoStart;
    return static_cast<std::uint16_t>(it->offset - lo);
  }
};

/// Concatenates a buffer list into a padded coding block. Every packet must
/// carry its own length in an IPv4-style total-length field.
inline CodingBlock make_block(std::uint8_t tid, std::uint8_t bid, std::span<const Bytes> packets,
                              const CodecParams& params) {
  CodingBlock b;
  b.tid = tid;
  b.bid = bid;
  Bytes data;
  for (const auto& p : packets) {
    if (p.size() < kMinPacketLength || ip_total_length(p, 0) != p.size())
      throw std::invalid_argument("make_block: packet length field does not match its size");
    b.boundaries.push_back({data.size(), p.size()});
    data.insert(data.end(), p.begin(), p.end());
  }
  b.data_length = data.size();
  const auto seg = compute_segmentation(data.size(), params.nr, params.lm);
  if (seg.ns > 255) throw std::invalid_argument("make_block: block needs more than 255 segments");
  b.ns = seg.ns;
  b.ls = seg.ls;
  b.payload = pad_block(data, b.ns, b.ls);
  return b;
}

// ---------------------------------------------------------------------------
// Encoding

enum class SegmentKind : std::uint8_t { kSystematic = 0, kCoded = 1 };

struct Emission {
  SegmentKind kind = SegmentKind::kSystematic;
  std::uint8_t sid = 0;                 // running packet counter within the block
  std::uint8_t segn = 0;                // systematic: segment index (0-based)
  std::uint16_t seed = 0;               // coded: coefficient seed
  std::uint16_t start = kNoStart;
  std::size_t round = 0;                // 0 = systematic phase, 1..Nk = redundancy rounds
  Duration pause_before = Duration::zero();
  std::vector<Element> coefficients;
  Bytes payload;
};

/// Emits a block's systematic segments, then up to Nk rounds of Nm coded
/// segments. cancel() (an ACK for this block) ends emission before the next
/// packet.
class BlockEncoder {
 public:
  BlockEncoder(CodingBlock block, const CodecParams& params, SeedSource seeds)
      : block_(std::move(block)), nk_(params.nk), nm_(params.nm), tr_(params.tr), seeds_(std::move(seeds)) {
    if (block_.ns < 1 || block_.ns > 255) throw std::invalid_argument("BlockEncoder: ns must be in [1, 255]");
    if (block_.ns + nk_ * nm_ > 256) throw std::invalid_argument("BlockEncoder: sid would overflow one byte");
    if (!seeds_) throw std::invalid_argument("BlockEncoder: missing seed source");
  }

  const CodingBlock& block() const noexcept { return block_; }
  std::size_t total() const noexcept { return block_.ns + nk_ * nm_; }
  std::size_t emitted() const noexcept { return next_; }
  bool cancelled() const noexcept { return cancelled_; }
  bool finished() const noexcept { return cancelled_ || next_ >= total(); }

  void cancel() noexcept { cancelled_ = true; }

  std::optional<Emission> next() {
    if (finished()) return std::nullopt;
    Emission e;
    e.sid = static_cast<std::uint8_t>(next_);
    const std::size_t ns = block_.ns;
    if (next_ < ns) {
      e.kind = SegmentKind::kSystematic;
      e.segn = static_cast<std::uint8_t>(next_);
      e.start = block_.start_of(next_);
      e.coefficients.assign(ns, 0);
      e.coefficients[next_] = 1;
      auto seg = block_.segment(next_);
      e.payload.assign(seg.begin(), seg.end());
    } else {
      const std::size_t coded = next_ - ns;
      e.kind = SegmentKind::kCoded;
      e.round = coded / nm_ + 1;
      if (coded % nm_ == 0 && e.round > 1) e.pause_before = tr_;
      e.seed = seeds_(block_.bid, coded);
      e.coefficients = coefficients_from_seed(e.seed, ns);
      e.payload.assign(block_.ls, 0);
      for (std::size_t x = 0; x < ns; ++x) gf256::axpy(e.payload, block_.segment(x), e.coefficients[x]);
    }
    ++next_;
    return e;
  }

 private:
  CodingBlock block_;
  std::size_t nk_;
  std::size_t nm_;
  Duration tr_;
  SeedSource seeds_;
  std::size_t next_ = 0;
  bool cancelled_ = false;
};

/// Runs a BlockEncoder to completion, checking the stop token before each
/// emission. Pauses are reported in Emission::pause_before, not slept.
inline std::vector<Emission> encode_block(CodingBlock block, const CodecParams& params, SeedSource seeds,
                                          std::stop_token ack = {}) {
  BlockEncoder enc(std::move(block), params, std::move(seeds));
  std::vector<Emission> out;
  while (!ack.stop_requested()) {
    auto e = enc.next();
    if (!e) break;
    out.push_back(std::move(*e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decoding

/// Progressive Gauss-Jordan decoder. The coefficient part of the stored rows
/// is kept in reduced row-echelon form; every row is zero left of its pivot.
class BlockDecoder {
 public:
  BlockDecoder(std::size_t ns, std::size_t ls) : ns_(ns), ls_(ls), pivot_row_(ns, kNone) {
    if (ns < 1) throw std::invalid_argument("BlockDecoder: ns must be >= 1");
    rows_.reserve(ns);
  }

  std::size_t ns() const noexcept { return ns_; }
  std::size_t ls() const noexcept { return ls_; }
  std::size_t rank() const noexcept { return rows_.size(); }
  bool decoded() const noexcept { return rows_.size() == ns_; }

  /// Adds one received row. Returns true when it raised the rank; linearly
  /// dependent rows are discarded.
  bool ingest(std::span<const Element> coeffs, ByteView payload) {
    if (coeffs.size() != ns_) throw std::invalid_argument("BlockDecoder: coefficient length mismatch");
    if (payload.size() != ls_) throw std::invalid_argument("BlockDecoder: payload length mismatch");
    if (decoded()) return false;

    Bytes row(ns_ + ls_);
    std::copy(coeffs.begin(), coeffs.end(), row.begin());
    std::copy(payload.begin(), payload.end(), row.begin() + static_cast<std::ptrdiff_t>(ns_));

    std::size_t lead = kNone;
    for (std::size_t c = 0; c < ns_; ++c) {
      const Element v = row[c];
      if (v == 0) continue;
      if (pivot_row_[c] == kNone) {
        if (lead == kNone) lead = c;
        continue;
      }
      eliminate(row, rows_[pivot_row_[c]], c, v);
    }
    if (lead == kNone) return false;
    // Elimination only touches columns right of each pivot, so `lead` is
    // still the first nonzero entry.
    gf256::scale(std::span(row).subspan(lead), gf256::inv(row[lead]));
    for (auto& other : rows_) {
      const Element v = other[lead];
      if (v != 0) eliminate(other, row, lead, v);
    }
    pivot_row_[lead] = rows_.size();
    rows_.push_back(std::move(row));
    return true;
  }

  /// True when segment i is known outright (its row is the unit vector e_i).
  bool segment_known(std::size_t i) const {
    const auto r = pivot_row_.at(i);
    if (r == kNone) return false;
    const auto& row = rows_[r];
    for (std::size_t c = i + 1; c < ns_; ++c)
      if (row[c] != 0) return false;
    return true;
  }

  /// Data part of segment i; only meaningful when segment_known(i).
  ByteView segment(std::size_t i) const {
    const auto r = pivot_row_.at(i);
    if (r == kNone) throw std::out_of_range("BlockDecoder: segment not available");
    return ByteView(rows_[r]).subspan(ns_, ls_);
  }

  /// Concatenated segments of a decoded block (still padded).
  Bytes payload() const {
    if (!decoded()) throw std::logic_error("BlockDecoder: block not decoded");
    Bytes out;
    out.reserve(ns_ * ls_);
    for (std::size_t i = 0; i < ns_; ++i) {
      auto s = segment(i);
      out.insert(out.end(), s.begin(), s.end());
    }
    return out;
  }

  /// Coefficient matrix in pivot order (rank x ns), for inspection.
  std::vector<std::vector<Element>> coefficient_matrix() const {
    std::vector<std::vector<Element>> m;
    for (std::size_t c = 0; c < ns_; ++c) {
      if (pivot_row_[c] == kNone) continue;
      const auto& row = rows_[pivot_row_[c]];
      m.emplace_back(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(ns_));
    }
    return m;
  }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  // dst -= v * src over columns [from, end); src is zero left of `from`.
  void eliminate(Bytes& dst, const Bytes& src, std::size_t from, Element v) const {
    gf256::axpy(std::span(dst).subspan(from), std::span(src).subspan(from), v);
  }

  std::size_t ns_;
  std::size_t ls_;
  std::vector<std::size_t> pivot_row_;
  std::vector<Bytes> rows_;
};

// ---------------------------------------------------------------------------
// Packet recovery

/// Splits an unpadded block into packets using their IPv4 total-length fields.
inline std::vector<PacketBoundary> parse_packet_boundaries(ByteView data) {
  std::vector<PacketBoundary> out;
  std::size_t pos = 0;
  while (pos < data.size()) {
    if (data.size() - pos < kMinPacketLength)
      throw DecodeError(DecodeReason::kMalformed, "parse_packet_boundaries: trailing bytes shorter than a header");
    const std::size_t len = ip_total_length(data, pos);
    if ((data[pos] >> 4) != 4 || len < kMinPacketLength || len > data.size() - pos)
      throw DecodeError(DecodeReason::kMalformed, "parse_packet_boundaries: bad length field");
    out.push_back({pos, len});
    pos += len;
  }
  return out;
}

inline std::vector<Bytes> reassemble_packets(ByteView data, std::span<const PacketBoundary> boundaries) {
  std::vector<Bytes> out;
  out.reserve(boundaries.size());
  for (const auto& b : boundaries) {
    if (b.offset > data.size() || b.length > data.size() - b.offset)
      throw DecodeError(DecodeReason::kMalformed, "reassemble_packets: boundary past end of block");
    out.emplace_back(data.begin() + static_cast<std::ptrdiff_t>(b.offset),
                     data.begin() + static_cast<std::ptrdiff_t>(b.offset + b.length));
  }
  return out;
}

inline std::vector<Bytes> reassemble_packets(ByteView data) {
  const auto boundaries = parse_packet_boundaries(data);
  return reassemble_packets(data, boundaries);
}

/// Unpads a decoded block and returns its original packets.
inline std::vector<Bytes> recover_packets(ByteView padded) {
  const Bytes data = unpad_block(padded);
  return reassemble_packets(data);
}

struct SystematicSegment {
  std::size_t index = 0;
  std::uint16_t start = kNoStart;
  ByteView data;
};

/// Recovers every packet of an undecodable block whose bytes all lie in
/// received segments, locating packets from the start fields and chaining
/// through their length fields.
inline std::vector<Bytes> extract_systematic(std::size_t ns, std::size_t ls,
                                             std::span<const SystematicSegment> received) {
  std::vector<const SystematicSegment*> by_index(ns, nullptr);
  for (const auto& s : received) {
    if (s.index < ns && s.data.size() == ls) by_index[s.index] = &s;
  }
  // The final byte is always the padding count, never packet data.
  const std::size_t limit = ns * ls - 1;
  auto covered = [&](std::size_t off, std::size_t len) {
    if (len == 0 || off + len > limit) return false;
    for (std::size_t i = off / ls; i <= (off + len - 1) / ls; ++i)
      if (!by_index[i]) return false;
    return true;
  };
  auto byte_at = [&](std::size_t off) { return by_index[off / ls]->data[off % ls]; };

  std::vector<Bytes> out;
  for (std::size_t i = 0; i < ns; ++i) {
    const auto* s = by_index[i];
    if (!s || s->start == kNoStart || s->start >= ls) continue;
    std::size_t pos = i * ls + s->start;
    while (pos < (i + 1) * ls) {
      if (!covered(pos, 4)) break;
      if ((byte_at(pos) >> 4) != 4) break;
      const std::size_t len = (std::size_t{byte_at(pos + 2)} << 8) | byte_at(pos + 3);
      if (len < kMinPacketLength || pos + len > limit) break;
      if (covered(pos, len)) {
        Bytes pkt(len);
        for (std::size_t k = 0; k < len; ++k) pkt[k] = byte_at(pos + k);
        out.push_back(std::move(pkt));
      }
      pos += len;
    }
  }
  return out;
}

}  // namespace ncrel::codec
