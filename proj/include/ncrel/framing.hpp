#pragma once

// Wire formats for coded packets and ACKs.
//
// Coded packet (big-endian):
//   0..19  IPv4 header (version 4, IHL 5, total length, protocol kNcProtocol)
//   20     TID
//   21     BID
//   22     SID
//   23     Ns
//   24     type (0 = systematic, 1 = coded)
//   25..26 start
//   27     segn              (systematic)
//   27..28 seed              (coded)
//   ...    segment (Ls bytes, Ls = total length - header length)
//
// ACK packet: IPv4 header (protocol kAckProtocol, total length 22), TID, BID.
//
// The header checksum field is the RFC 1071 checksum of the whole packet,
// so corruption anywhere in the segment is caught as well.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>

#include "ncrel/bytes.hpp"
#include "ncrel/codec.hpp"

namespace ncrel::framing {

inline constexpr std::size_t kIpHeaderLength = 20;
inline constexpr std::size_t kSystematicHeaderLength = 28;
inline constexpr std::size_t kCodedHeaderLength = 29;
inline constexpr std::size_t kAckLength = 22;
inline constexpr std::uint8_t kNcProtocol = 253;   // RFC 3692 experimental
inline constexpr std::uint8_t kAckProtocol = 254;  // RFC 3692 experimental
inline constexpr std::size_t kChecksumOffset = 10;

/// RFC 1071 internet checksum; an odd trailing byte is summed as if followed
/// by a zero byte.
inline std::uint16_t checksum_rfc1071(ByteView buf) {
  std::uint32_t sum = 0;
  std::size_t i = 0;
  for (; i + 1 < buf.size(); i += 2) sum += (std::uint32_t{buf[i]} << 8) | buf[i + 1];
  if (i < buf.size()) sum += std::uint32_t{buf[i]} << 8;
  while (sum >> 16) sum = (sum & 0xFFFF) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum & 0xFFFF);
}

struct Ipv4Addresses {
  std::uint32_t src = 0x0A000001;  // 10.0.0.1
  std::uint32_t dst = 0x0A000002;  // 10.0.0.2

  friend bool operator==(const Ipv4Addresses&, const Ipv4Addresses&) = default;
};

struct NcHeader {
  std::uint8_t tid = 0;
  std::uint8_t bid = 0;
  std::uint8_t sid = 0;
  std::uint8_t ns = 0;
  codec::SegmentKind type = codec::SegmentKind::kSystematic;
  std::uint16_t start = codec::kNoStart;
  std::uint8_t segn = 0;   // systematic only
  std::uint16_t seed = 0;  // coded only
  std::uint16_t ip_id = 0;
  Ipv4Addresses addr{};

  std::size_t length() const noexcept {
    return type == codec::SegmentKind::kSystematic ? kSystematicHeaderLength : kCodedHeaderLength;
  }

  friend bool operator==(const NcHeader&, const NcHeader&) = default;
};

struct CodedPacket {
  NcHeader header;
  Bytes segment;
};

namespace detail {

inline void write_ip_header(std::span<std::uint8_t> w, std::size_t total, std::uint8_t protocol,
                            std::uint16_t id, const Ipv4Addresses& addr) {
  w[0] = 0x45;
  w[1] = 0;
  store_be16(w, 2, static_cast<std::uint16_t>(total));
  store_be16(w, 4, id);
  store_be16(w, 6, 0);
  w[8] = 64;
  w[9] = protocol;
  store_be16(w, kChecksumOffset, 0);
  store_be32(w, 12, addr.src);
  store_be32(w, 16, addr.dst);
}

inline void seal(std::span<std::uint8_t> w) {
  store_be16(w, kChecksumOffset, 0);
  store_be16(w, kChecksumOffset, checksum_rfc1071(w));
}

// Validates the IPv4 envelope and whole-packet checksum; returns protocol.
inline std::uint8_t open_ip(ByteView wire, std::size_t min_length) {
  if (wire.size() < min_length) throw DecodeError(DecodeReason::kTruncated, "wire shorter than header");
  // Checksum first: a single corrupted byte anywhere always shows up here.
  if (checksum_rfc1071(wire) != 0) throw DecodeError(DecodeReason::kBadChecksum, "checksum mismatch");
  if (wire[0] != 0x45) throw DecodeError(DecodeReason::kMalformed, "not an IPv4 header without options");
  const std::size_t total = load_be16(wire, 2);
  if (total > wire.size()) throw DecodeError(DecodeReason::kTruncated, "wire shorter than total length");
  if (total != wire.size()) throw DecodeError(DecodeReason::kBadLength, "total length does not match wire size");
  return wire[9];
}

}  // namespace detail

inline Bytes encapsulate(const NcHeader& h, ByteView segment) {
  if (h.type != codec::SegmentKind::kSystematic && h.type != codec::SegmentKind::kCoded)
    throw std::invalid_argument("encapsulate: unknown segment type");
  if (h.ns == 0) throw std::invalid_argument("encapsulate: ns must be >= 1");
  if (segment.empty()) throw std::invalid_argument("encapsulate: empty segment");
  if (h.type == codec::SegmentKind::kSystematic && h.segn >= h.ns)
    throw std::invalid_argument("encapsulate: segn out of range");
  if (h.start != codec::kNoStart && h.start >= segment.size())
    throw std::invalid_argument("encapsulate: start beyond segment");
  const std::size_t hl = h.length();
  const std::size_t total = hl + segment.size();
  if (total > 0xFFFF) throw std::invalid_argument("encapsulate: packet exceeds IPv4 total length");

  Bytes w(total);
  detail::write_ip_header(w, total, kNcProtocol, h.ip_id, h.addr);
  w[20] = h.tid;
  w[21] = h.bid;
  w[22] = h.sid;
  w[23] = h.ns;
  w[24] = static_cast<std::uint8_t>(h.type);
  store_be16(w, 25, h.start);
  if (h.type == codec::SegmentKind::kSystematic)
    w[27] = h.segn;
  else
    store_be16(w, 27, h.seed);
  std::copy(segment.begin(), segment.end(), w.begin() + static_cast<std::ptrdiff_t>(hl));
  detail::seal(w);
  return w;
}

/// Overload taking the block-level size type; rejects Ns > 255 and SIDs past one byte.
inline Bytes encapsulate(std::uint8_t tid, std::uint8_t bid, std::size_t ns, const codec::Emission& e) {
  if (ns > 255) throw std::invalid_argument("encapsulate: ns exceeds one byte");
  NcHeader h;
  h.tid = tid;
  h.bid = bid;
  h.sid = e.sid;
  h.ns = static_cast<std::uint8_t>(ns);
  h.type = e.kind;
  h.start = e.start;
  h.segn = e.segn;
  h.seed = e.seed;
  h.ip_id = static_cast<std::uint16_t>((bid << 8) | e.sid);
  return encapsulate(h, e.payload);
}

inline CodedPacket decapsulate(ByteView wire) {
  const auto protocol = detail::open_ip(wire, kSystematicHeaderLength);
  if (protocol != kNcProtocol) throw DecodeError(DecodeReason::kMalformed, "not a coded packet");
  CodedPacket p;
  auto& h = p.header;
  h.ip_id = load_be16(wire, 4);
  h.addr.src = load_be32(wire, 12);
  h.addr.dst = load_be32(wire, 16);
  h.tid = wire[20];
  h.bid = wire[21];
  h.sid = wire[22];
  h.ns = wire[23];
  if (wire[24] > 1) throw DecodeError(DecodeReason::kUnknownType, "unknown segment type");
  h.type = static_cast<codec::SegmentKind>(wire[24]);
  h.start = load_be16(wire, 25);
  if (h.type == codec::SegmentKind::kSystematic) {
    h.segn = wire[27];
  } else {
    if (wire.size() < kCodedHeaderLength) throw DecodeError(DecodeReason::kTruncated, "coded header truncated");
    h.seed = load_be16(wire, 27);
  }
  const std::size_t hl = h.length();
  if (wire.size() == hl) throw DecodeError(DecodeReason::kTruncated, "empty segment");
  if (h.ns == 0) throw DecodeError(DecodeReason::kMalformed, "ns is zero");
  if (h.type == codec::SegmentKind::kSystematic && h.segn >= h.ns)
    throw DecodeError(DecodeReason::kMalformed, "segn out of range");
  p.segment.assign(wire.begin() + static_cast<std::ptrdiff_t>(hl), wire.end());
  return p;
}

struct Ack {
  std::uint8_t tid = 0;
  std::uint8_t bid = 0;

  friend bool operator==(const Ack&, const Ack&) = default;
};

inline Bytes encode_ack(Ack ack, const Ipv4Addresses& addr = {.src = 0x0A000002, .dst = 0x0A000001}) {
  Bytes w(kAckLength);
  detail::write_ip_header(w, kAckLength, kAckProtocol, static_cast<std::uint16_t>((ack.tid << 8) | ack.bid), addr);
  w[20] = ack.tid;
  w[21] = ack.bid;
  detail::seal(w);
  return w;
}

inline Ack decode_ack(ByteView wire) {
  if (wire.size() != kAckLength) throw DecodeError(DecodeReason::kBadLength, "ack has wrong length");
  if (detail::open_ip(wire, kAckLength) != kAckProtocol) throw DecodeError(DecodeReason::kMalformed, "not an ack");
  return {wire[20], wire[21]};
}

/// NC header overhead per segment when Ns coefficients are carried explicitly.
inline double overhead_explicit(std::size_t header_len, std::size_t ns, std::size_t ls) {
  return static_cast<double>(header_len + ns) / static_cast<double>(ls);
}

/// NC header overhead per segment when a `seed_len`-byte seed replaces the coefficients.
inline double overhead_seeded(std::size_t header_len, std::size_t seed_len, std::size_t ls) {
  return static_cast<double>(header_len + seed_len) / static_cast<double>(ls);
}

/// Serial-number comparison on 8-bit block ids: true when `a` is newer than `b`.
constexpr bool bid_newer(std::uint8_t a, std::uint8_t b) noexcept {
  const auto d = static_cast<std::uint8_t>(a - b);
  return d != 0 && d < 128;
}

}  // namespace ncrel::framing
