#pragma once

// Built-in checks run by `ncrel selftest`: field exhaustives, codec vectors
// and round trips, and the golden wire fixtures.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ncrel/bytes.hpp"
#include "ncrel/codec.hpp"
#include "ncrel/framing.hpp"
#include "ncrel/gf256.hpp"

namespace ncrel::selftest {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail {

inline std::uint8_t slow_mul(std::uint8_t a, std::uint8_t b) {
  unsigned r = 0;
  unsigned x = a;
  for (unsigned y = b; y; y >>= 1) {
    if (y & 1) r ^= x;
    x <<= 1;
    if (x & 0x100) x ^= gf256::kPolynomial;
  }
  return static_cast<std::uint8_t>(r);
}

inline CheckResult gf_oracle() {
  for (unsigned a = 0; a < 256; ++a)
    for (unsigned b = 0; b < 256; ++b)
      if (gf256::mul(a, b) != slow_mul(a, b))
        return {"gf256.mul_oracle", false, "mismatch at " + std::to_string(a) + "*" + std::to_string(b)};
  return {"gf256.mul_oracle", true, "65536 pairs"};
}

inline CheckResult gf_inverses() {
  for (unsigned a = 1; a < 256; ++a)
    if (gf256::mul(a, gf256::inv(a)) != 1) return {"gf256.inverses", false, "a=" + std::to_string(a)};
  return {"gf256.inverses", true, "255 elements"};
}

inline CheckResult gf_axioms() {
  for (unsigned a = 0; a < 256; ++a) {
    for (unsigned b = 0; b < 256; ++b) {
      if (gf256::mul(a, b) != gf256::mul(b, a)) return {"gf256.axioms", false, "commutativity"};
      for (unsigned c = 0; c < 256; ++c) {
        if (gf256::mul(gf256::mul(a, b), c) != gf256::mul(a, gf256::mul(b, c)))
          return {"gf256.axioms", false, "associativity"};
        if (gf256::mul(a, b ^ c) != (gf256::mul(a, b) ^ gf256::mul(a, c)))
          return {"gf256.axioms", false, "distributivity"};
      }
    }
  }
  return {"gf256.axioms", true, "exhaustive"};
}

inline CheckResult codec_vectors() {
  auto s1 = codec::compute_segmentation(22399, 120, 1400);
  auto s2 = codec::compute_segmentation(180000, 120, 1400);
  if (s1.ns != 120 || s1.ls != 187 || s2.ns != 129 || s2.ls != 1396)
    return {"codec.vectors", false, "segmentation"};
  codec::GerhardPrng g(1);
  if (g.next(255) != 83 || g.state() != 32722) return {"codec.vectors", false, "prng"};
  Bytes p(10, 0xAA);
  auto padded = codec::pad_block(p, 4, 3);
  if (padded.size() != 12 || padded[10] != 0 || padded[11] != 2) return {"codec.vectors", false, "padding"};
  const Bytes rfc{0x00, 0x01, 0xF2, 0x03, 0xF4, 0xF5, 0xF6, 0xF7};
  if (framing::checksum_rfc1071(rfc) != 0x220D) return {"codec.vectors", false, "checksum"};
  return {"codec.vectors", true, ""};
}

inline Bytes ip_packet(std::mt19937_64& rng, std::size_t len) {
  Bytes p(len);
  for (auto& b : p) b = static_cast<std::uint8_t>(rng());
  p[0] = 0x45;
  store_be16(p, 2, static_cast<std::uint16_t>(len));
  return p;
}

inline CheckResult codec_round_trip() {
  std::mt19937_64 rng(20240611);
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    std::vector<Bytes> packets(1 + rng() % 8);
    for (auto& p : packets) p = ip_packet(rng, 20 + rng() % 600);
    codec::CodecParams params;
    params.nr = 1 + rng() % 16;
    params.lm = 1400;
    params.nk = 1;
    params.nm = params.nr;
    auto block = codec::make_block(0, 0, packets, params);
    codec::BlockEncoder enc(block, params, codec::RandomSeedSource(rng()));
    codec::BlockDecoder dec(block.ns, block.ls);
    while (auto e = enc.next()) {
      if (rng() % 4 == 0) continue;  // erased
      dec.ingest(e->coefficients, e->payload);
    }
    if (!dec.decoded()) continue;  // not enough survived; nothing to compare
    if (codec::recover_packets(dec.payload()) != packets)
      return {"codec.round_trip", false, "trial " + std::to_string(t)};
  }
  return {"codec.round_trip", true, std::to_string(trials) + " trials"};
}

inline std::map<std::string, std::string> kv(std::istringstream& in) {
  std::map<std::string, std::string> out;
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq != std::string::npos) out[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return out;
}

inline unsigned long field(const std::map<std::string, std::string>& m, const std::string& k) {
  return std::stoul(m.at(k), nullptr, 0);
}

/// Content pattern of fixture segments.
inline std::uint8_t fixture_byte(std::size_t i) { return static_cast<std::uint8_t>((i * 29 + 7) & 0xFF); }

inline std::string check_fixture(const Bytes& wire, const std::string& kind,
                                 const std::map<std::string, std::string>& f) {
  if (kind == "ack") {
    const auto ack = framing::decode_ack(wire);
    if (ack.tid != field(f, "tid") || ack.bid != field(f, "bid")) return "ack fields";
    if (framing::encode_ack(ack) != wire) return "ack re-encode";
    return "";
  }
  const auto pkt = framing::decapsulate(wire);
  const auto& h = pkt.header;
  framing::NcHeader want;
  want.tid = static_cast<std::uint8_t>(field(f, "tid"));
  want.bid = static_cast<std::uint8_t>(field(f, "bid"));
  want.sid = static_cast<std::uint8_t>(field(f, "sid"));
  want.ns = static_cast<std::uint8_t>(field(f, "ns"));
  want.type = field(f, "type") ? codec::SegmentKind::kCoded : codec::SegmentKind::kSystematic;
  want.start = static_cast<std::uint16_t>(field(f, "start"));
  if (want.type == codec::SegmentKind::kSystematic)
    want.segn = static_cast<std::uint8_t>(field(f, "segn"));
  else
    want.seed = static_cast<std::uint16_t>(field(f, "seed"));
  want.ip_id = static_cast<std::uint16_t>(field(f, "ip_id"));
  if (!(h == want)) return "header fields";
  if (pkt.segment.size() != field(f, "ls")) return "segment length";
  for (std::size_t i = 0; i < pkt.segment.size(); ++i)
    if (pkt.segment[i] != fixture_byte(i)) return "segment content";
  if (framing::encapsulate(h, pkt.segment) != wire) return "re-encode";
  return "";
}

}  // namespace detail

/// Golden fixtures listed in `<dir>/manifest.txt`, one check per file.
inline std::vector<CheckResult> fixture_checks(const std::filesystem::path& dir) {
  std::vector<CheckResult> out;
  std::ifstream man(dir / "manifest.txt");
  if (!man) return {{"fixtures.manifest", false, "cannot open " + (dir / "manifest.txt").string()}};
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream in(line);
    std::string file, kind;
    in >> file >> kind;
    CheckResult r{"fixture." + file, false, ""};
    std::ifstream bin(dir / file, std::ios::binary);
    if (!bin) {
      r.detail = "missing file";
      out.push_back(r);
      continue;
    }
    Bytes wire((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    try {
      r.detail = detail::check_fixture(wire, kind, detail::kv(in));
      r.pass = r.detail.empty();
    } catch (const std::exception& e) {
      r.detail = e.what();
    }
    out.push_back(r);
  }
  return out;
}

inline std::vector<CheckResult> run_all(const std::filesystem::path& fixture_dir) {
  std::vector<CheckResult> out{detail::gf_oracle(), detail::gf_inverses(), detail::gf_axioms(),
                               detail::codec_vectors(), detail::codec_round_trip()};
  for (auto& r : fixture_checks(fixture_dir)) out.push_back(std::move(r));
  return out;
}

/// Prints a pass/fail table; true when everything passed.
inline bool report(std::ostream& os, const std::vector<CheckResult>& results) {
  std::size_t failed = 0;
  for (const auto& r : results) {
    os << (r.pass ? "PASS  " : "FAIL  ") << r.name;
    if (!r.detail.empty()) os << "  (" << r.detail << ")";
    os << '\n';
    if (!r.pass) ++failed;
  }
  os << results.size() - failed << "/" << results.size() << " checks passed\n";
  return failed == 0;
}

}  // namespace ncrel::selftest
