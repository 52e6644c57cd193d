#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <stop_token>
#include <vector>

#include "ncrel/codec.hpp"
#include "oracles.hpp"

using namespace ncrel;
using namespace ncrel::codec;

namespace {

std::size_t brute_ns(std::size_t lb, std::size_t nr, std::size_t lm) {
  for (std::size_t ns = nr;; ++ns)
    if ((lb + 1 + ns - 1) / ns <= lm) return ns;
}

CodecParams small_params(std::size_t nr, std::size_t nm, std::size_t nk = 1) {
  CodecParams p;
  p.nr = nr;
  p.nm = nm;
  p.nk = nk;
  p.lm = 1400;
  return p;
}

}  // namespace

TEST(Segmentation, Vectors) {
  auto a = compute_segmentation(22399, 120, 1400);
  EXPECT_EQ(a.ns, 120u);
  EXPECT_EQ(a.ls, 187u);
  auto b = compute_segmentation(119, 120, 1400);
  EXPECT_EQ(b.ns, 120u);
  EXPECT_EQ(b.ls, 1u);
  auto c = compute_segmentation(180000, 120, 1400);
  EXPECT_EQ(c.ns, 129u);
  EXPECT_EQ(c.ls, 1396u);
}

TEST(Segmentation, MatchesBruteForceAndInvariants) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t lb = rng() % 300000;
    const std::size_t nr = 1 + rng() % 200;
    const std::size_t lm = 1 + rng() % 2000;
    const auto s = compute_segmentation(lb, nr, lm);
    ASSERT_EQ(s.ns, brute_ns(lb, nr, lm));
    ASSERT_GE(s.ns, nr);
    ASSERT_LE(s.ls, lm);
    ASSERT_GE(s.ns * s.ls, lb + 1);
    ASSERT_EQ(s.ls, (lb + 1 + s.ns - 1) / s.ns);
  }
}

TEST(Padding, Vectors) {
  Bytes p(10);
  std::iota(p.begin(), p.end(), 1);
  auto a = pad_block(p, 4, 3);
  ASSERT_EQ(a.size(), 12u);
  EXPECT_TRUE(std::equal(p.begin(), p.end(), a.begin()));
  EXPECT_EQ(a[10], 0x00);
  EXPECT_EQ(a[11], 0x02);
  EXPECT_EQ(unpad_block(a), p);

  Bytes q(11, 0xEE);
  auto b = pad_block(q, 4, 3);
  ASSERT_EQ(b.size(), 12u);
  EXPECT_EQ(b[11], 0x01);
  EXPECT_EQ(unpad_block(b), q);
}

TEST(Padding, RejectsTooSmallTarget) {
  Bytes p(12);
  EXPECT_THROW(pad_block(p, 4, 3), std::invalid_argument);
}

TEST(Padding, MalformedCountByte) {
  Bytes b(12, 0);
  b[11] = 0xFF;
  try {
    unpad_block(b);
    FAIL() << "expected DecodeError";
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.reason(), DecodeReason::kBadPadding);
  }
  b[11] = 0x00;
  EXPECT_THROW(unpad_block(b), DecodeError);
  EXPECT_THROW(unpad_block(Bytes{}), DecodeError);
}

TEST(Padding, RoundTripRandom) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    Bytes p(rng() % 3000);
    for (auto& x : p) x = static_cast<std::uint8_t>(rng());
    const auto s = compute_segmentation(p.size(), 1 + rng() % 64, 1400);
    ASSERT_EQ(unpad_block(pad_block(p, s.ns, s.ls)), p);
  }
}

TEST(Prng, Vectors) {
  GerhardPrng a;
  EXPECT_EQ(a.next(1), 1u);
  GerhardPrng b;
  EXPECT_EQ(b.next(255), 83u);
  EXPECT_EQ(b.state(), 32722u);
  EXPECT_THROW(b.next(0), std::invalid_argument);
}

TEST(Prng, DeterministicAndInRange) {
  GerhardPrng a, b;
  for (int i = 0; i < 10000; ++i) {
    const auto x = a.next(255);
    ASSERT_EQ(x, b.next(255));
    ASSERT_GE(x, 1u);
    ASSERT_LE(x, 255u);
  }
}

TEST(Prng, FixedPointIsSelfMapping) {
  GerhardPrng g(kGerhardFixedPoint);
  g.next(255);
  EXPECT_EQ(g.state(), kGerhardFixedPoint);
}

TEST(Coefficients, FromSeed) {
  EXPECT_EQ(coefficients_from_seed(1, 1), std::vector<Element>{0x53});
  EXPECT_EQ(coefficients_from_seed(777, 120), coefficients_from_seed(777, 120));
  for (std::uint32_t s = 0; s < 65536; s += 97) {
    for (auto c : coefficients_from_seed(static_cast<std::uint16_t>(s), 64)) ASSERT_NE(c, 0);
  }
  EXPECT_THROW(coefficients_from_seed(1, 0), std::invalid_argument);
}

TEST(Coefficients, SeedSourceSkipsFixedPointAndRepeats) {
  RandomSeedSource src(9);
  for (int block = 0; block < 50; ++block) {
    std::set<std::uint16_t> seen;
    for (std::size_t k = 0; k < 120; ++k) {
      const auto s = src(static_cast<std::uint8_t>(block), k);
      ASSERT_NE(s, kGerhardFixedPoint);
      ASSERT_TRUE(seen.insert(s).second);
    }
  }
}

TEST(Block, LayoutInvariants) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    auto packets = oracle::packet_list(rng, 1 + rng() % 20, 20, 1500);
    auto params = small_params(1 + rng() % 100, 0);
    const auto b = make_block(0, 0, packets, params);
    ASSERT_EQ(b.payload.size(), b.ns * b.ls);
    ASSERT_LE(b.ls, params.lm);
    ASSERT_GE(b.ns, params.nr);
    ASSERT_EQ(b.boundaries.size(), packets.size());
    Bytes joined;
    for (std::size_t s = 0; s < b.ns; ++s) joined.insert(joined.end(), b.segment(s).begin(), b.segment(s).end());
    ASSERT_EQ(joined, b.payload);
  }
}

TEST(Block, RejectsPacketWithWrongLengthField) {
  std::mt19937_64 rng(4);
  auto p = oracle::ip_packet(rng, 100);
  p[3] = 99;
  std::vector<Bytes> list{p};
  EXPECT_THROW(make_block(0, 0, list, small_params(4, 0)), std::invalid_argument);
}

TEST(Block, StartFieldPointsAtFirstBoundary) {
  std::mt19937_64 rng(5);
  auto packets = oracle::packet_list(rng, 6, 40, 300);
  const auto b = make_block(0, 0, packets, small_params(20, 0));
  for (std::size_t s = 0; s < b.ns; ++s) {
    const auto st = b.start_of(s);
    std::optional<std::size_t> first;
    for (const auto& pb : b.boundaries)
      if (pb.offset >= s * b.ls && pb.offset < (s + 1) * b.ls) {
        first = pb.offset - s * b.ls;
        break;
      }
    if (first)
      EXPECT_EQ(st, *first);
    else
      EXPECT_EQ(st, kNoStart);
  }
}

TEST(Encoder, NoRedundancyEmitsSystematicOnly) {
  std::mt19937_64 rng(6);
  auto packets = oracle::packet_list(rng, 3, 100, 200);
  auto params = small_params(8, 10, 0);
  const auto out = encode_block(make_block(0, 0, packets, params), params, RandomSeedSource(1));
  EXPECT_EQ(out.size(), 8u);
}

TEST(Encoder, DefaultsEmit130PerBlock) {
  std::mt19937_64 rng(7);
  auto packets = oracle::packet_list(rng, 16, 1400, 1400);
  CodecParams params;  // Nr 120, Nk 1, Nm 10
  const auto out = encode_block(make_block(0, 0, packets, params), params, RandomSeedSource(1));
  EXPECT_EQ(out.size(), 130u);
}

TEST(Encoder, AckAfterSystematicPhaseStopsRedundancy) {
  std::mt19937_64 rng(8);
  auto packets = oracle::packet_list(rng, 4, 100, 300);
  auto params = small_params(12, 10);
  BlockEncoder enc(make_block(0, 0, packets, params), params, RandomSeedSource(1));
  std::size_t n = 0;
  while (n < enc.block().ns && enc.next()) ++n;
  enc.cancel();
  EXPECT_FALSE(enc.next().has_value());
  EXPECT_EQ(n, enc.block().ns);

  std::stop_source stop;
  stop.request_stop();
  EXPECT_TRUE(encode_block(make_block(0, 0, packets, params), params, RandomSeedSource(1), stop.get_token()).empty());
}

TEST(Encoder, SystematicPrefixAndCodedCombination) {
  std::mt19937_64 rng(9);
  auto packets = oracle::packet_list(rng, 5, 50, 400);
  auto params = small_params(10, 6, 2);
  const auto block = make_block(0, 0, packets, params);
  oracle::Matrix segs;
  for (std::size_t s = 0; s < block.ns; ++s) segs.emplace_back(block.segment(s).begin(), block.segment(s).end());
  const auto out = encode_block(block, params, RandomSeedSource(3));
  ASSERT_EQ(out.size(), block.ns + 12);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& e = out[i];
    EXPECT_EQ(e.sid, i);
    if (i < block.ns) {
      EXPECT_EQ(e.kind, SegmentKind::kSystematic);
      EXPECT_EQ(e.segn, i);
      std::vector<Element> unit(block.ns, 0);
      unit[i] = 1;
      EXPECT_EQ(e.coefficients, unit);
      EXPECT_EQ(e.payload, segs[i]);
      EXPECT_EQ(e.start, block.start_of(i));
    } else {
      EXPECT_EQ(e.kind, SegmentKind::kCoded);
      EXPECT_EQ(e.start, kNoStart);
      EXPECT_EQ(e.coefficients, coefficients_from_seed(e.seed, block.ns));
      EXPECT_EQ(e.payload, oracle::combine(e.coefficients, segs));
    }
  }
}

TEST(Encoder, PauseBeforeLaterRounds) {
  std::mt19937_64 rng(10);
  auto packets = oracle::packet_list(rng, 2, 100, 100);
  auto params = small_params(4, 3, 3);
  params.tr = std::chrono::milliseconds(7);
  const auto out = encode_block(make_block(0, 0, packets, params), params, RandomSeedSource(1));
  ASSERT_EQ(out.size(), 4u + 9u);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool round_start = i == 7 || i == 10;
    EXPECT_EQ(out[i].pause_before, round_start ? params.tr : Duration::zero()) << i;
  }
}

TEST(Encoder, RejectsSidOverflow) {
  std::mt19937_64 rng(11);
  auto packets = oracle::packet_list(rng, 1, 100, 100);
  auto params = small_params(200, 60);
  EXPECT_THROW(BlockEncoder(make_block(0, 0, packets, params), params, RandomSeedSource(1)), std::invalid_argument);
}

TEST(Decoder, SystematicRowsDecodeDirectly) {
  std::mt19937_64 rng(12);
  auto packets = oracle::packet_list(rng, 3, 60, 200);
  auto params = small_params(6, 0, 0);
  const auto block = make_block(0, 0, packets, params);
  BlockDecoder dec(block.ns, block.ls);
  for (const auto& e : encode_block(block, params, RandomSeedSource(1))) EXPECT_TRUE(dec.ingest(e.coefficients, e.payload));
  ASSERT_TRUE(dec.decoded());
  EXPECT_EQ(dec.payload(), block.payload);
  EXPECT_EQ(recover_packets(dec.payload()), packets);
}

TEST(Decoder, DuplicateRowCountsOnce) {
  BlockDecoder dec(4, 8);
  const auto c = coefficients_from_seed(99, 4);
  Bytes payload(8, 0x33);
  EXPECT_TRUE(dec.ingest(c, payload));
  EXPECT_FALSE(dec.ingest(c, payload));
  EXPECT_EQ(dec.rank(), 1u);
}

TEST(Decoder, RejectsWrongLengths) {
  BlockDecoder dec(4, 8);
  EXPECT_THROW(dec.ingest(std::vector<Element>(3, 1), Bytes(8)), std::invalid_argument);
  EXPECT_THROW(dec.ingest(std::vector<Element>(4, 1), Bytes(7)), std::invalid_argument);
}

// After every ingest: rank is monotone and bounded, and the coefficient part
// is in reduced row-echelon form.
TEST(Decoder, RankMonotoneAndRref) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t ns = 1 + rng() % 16;
    BlockDecoder dec(ns, 5);
    std::size_t prev = 0;
    for (int k = 0; k < 40; ++k) {
      std::vector<Element> c(ns);
      for (auto& x : c) x = rng() % 3 == 0 ? 0 : static_cast<Element>(rng());
      Bytes p(5);
      for (auto& x : p) x = static_cast<std::uint8_t>(rng());
      dec.ingest(c, p);
      ASSERT_GE(dec.rank(), prev);
      ASSERT_LE(dec.rank(), prev + 1);
      ASSERT_LE(dec.rank(), ns);
      prev = dec.rank();
      const auto m = dec.coefficient_matrix();
      std::vector<std::size_t> pivots;
      for (const auto& row : m) {
        std::size_t lead = 0;
        while (lead < ns && row[lead] == 0) ++lead;
        ASSERT_LT(lead, ns);
        ASSERT_EQ(row[lead], 1);
        if (!pivots.empty()) {
          ASSERT_GT(lead, pivots.back());
        }
        pivots.push_back(lead);
      }
      for (std::size_t r = 0; r < m.size(); ++r)
        for (std::size_t o = 0; o < m.size(); ++o) {
          if (o != r) {
            ASSERT_EQ(m[o][pivots[r]], 0);
          }
        }
    }
    EXPECT_EQ(dec.decoded(), dec.rank() == ns);
  }
}

TEST(Decoder, MatchesBatchSolve) {
  std::mt19937_64 rng(14);
  int compared = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t ns = 1 + rng() % 16;
    const std::size_t ls = 1 + rng() % 24;
    oracle::Matrix segs(ns, std::vector<std::uint8_t>(ls));
    for (auto& s : segs)
      for (auto& x : s) x = static_cast<std::uint8_t>(rng());
    oracle::Matrix coeffs, payloads;
    BlockDecoder dec(ns, ls);
    while (!dec.decoded()) {
      std::vector<Element> c;
      if (rng() % 3 == 0) {
        c.assign(ns, 0);
        c[rng() % ns] = 1;
      } else {
        c = coefficients_from_seed(static_cast<std::uint16_t>(rng()), ns);
      }
      auto y = oracle::combine(c, segs);
      dec.ingest(c, y);
      coeffs.push_back(c);
      payloads.push_back(y);
    }
    const auto x = oracle::batch_solve(coeffs, payloads);
    ASSERT_TRUE(x.has_value());
    for (std::size_t i = 0; i < ns; ++i) {
      ASSERT_EQ(Bytes(dec.segment(i).begin(), dec.segment(i).end()), (*x)[i]);
      ASSERT_EQ((*x)[i], segs[i]);
    }
    ++compared;
  }
  EXPECT_EQ(compared, 200);
}

// Any erasure pattern that leaves Ns independent rows decodes byte-exactly.
TEST(Decoder, RoundTripUnderRandomErasures) {
  std::mt19937_64 rng(15);
  int decoded = 0;
  for (int trial = 0; trial < 300; ++trial) {
    auto packets = oracle::packet_list(rng, 1 + rng() % 12, 20, 900);
    auto params = small_params(1 + rng() % 32, 1 + rng() % 32);
    const auto block = make_block(0, static_cast<std::uint8_t>(trial), packets, params);
    const auto out = encode_block(block, params, RandomSeedSource(rng()));
    const double p = 0.05 * static_cast<double>(rng() % 10);
    BlockDecoder dec(block.ns, block.ls);
    std::bernoulli_distribution erase(p);
    for (const auto& e : out)
      if (!erase(rng)) dec.ingest(e.coefficients, e.payload);
    if (!dec.decoded()) continue;
    ++decoded;
    ASSERT_EQ(recover_packets(dec.payload()), packets);
  }
  EXPECT_GT(decoded, 150);
}

TEST(Reassembly, SinglePacket) {
  std::mt19937_64 rng(16);
  auto p = oracle::ip_packet(rng, 77);
  EXPECT_EQ(reassemble_packets(p), std::vector<Bytes>{p});
}

TEST(Reassembly, MixedSizesRoundTrip) {
  std::mt19937_64 rng(17);
  auto packets = oracle::packet_list(rng, 16, 20, 1500);
  auto params = small_params(40, 0, 0);
  const auto block = make_block(0, 0, packets, params);
  EXPECT_EQ(reassemble_packets(unpad_block(block.payload), block.boundaries), packets);
  EXPECT_EQ(recover_packets(block.payload), packets);
}

TEST(Reassembly, BoundaryPastEnd) {
  Bytes data(50, 0);
  std::vector<PacketBoundary> b{{40, 20}};
  EXPECT_THROW(reassemble_packets(data, b), DecodeError);
  std::mt19937_64 rng(18);
  auto p = oracle::ip_packet(rng, 60);
  p[3] = 200;  // claims more than is there
  EXPECT_THROW(reassemble_packets(p), DecodeError);
}

namespace {

std::vector<SystematicSegment> systematic_of(const CodingBlock& b, const std::vector<bool>& keep) {
  std::vector<SystematicSegment> out;
  for (std::size_t i = 0; i < b.ns; ++i)
    if (keep[i]) out.push_back({i, b.start_of(i), b.segment(i)});
  return out;
}

}  // namespace

TEST(Extraction, AllSegmentsGiveAllPackets) {
  std::mt19937_64 rng(19);
  auto packets = oracle::packet_list(rng, 9, 20, 500);
  const auto b = make_block(0, 0, packets, small_params(30, 0));
  EXPECT_EQ(extract_systematic(b.ns, b.ls, systematic_of(b, std::vector<bool>(b.ns, true))), packets);
}

TEST(Extraction, NoSegmentsGiveNothing) {
  EXPECT_TRUE(extract_systematic(10, 10, {}).empty());
}

TEST(Extraction, PacketSpanningLostSegmentIsDropped) {
  // Two packets of 45 bytes over 10-byte segments: packet 0 covers segments
  // 0-4, packet 1 covers 4-9. Losing segment 3 kills only packet 0.
  std::mt19937_64 rng(20);
  std::vector<Bytes> packets{oracle::ip_packet(rng, 45), oracle::ip_packet(rng, 45)};
  auto params = small_params(10, 0);
  const auto b = make_block(0, 0, packets, params);
  ASSERT_EQ(b.ls, 10u);
  std::vector<bool> keep(b.ns, true);
  keep[3] = false;
  EXPECT_EQ(extract_systematic(b.ns, b.ls, systematic_of(b, keep)), std::vector<Bytes>{packets[1]});
  keep[3] = true;
  keep[7] = false;
  EXPECT_EQ(extract_systematic(b.ns, b.ls, systematic_of(b, keep)), std::vector<Bytes>{packets[0]});
}

// Every extracted packet is an original packet, never a fabricated one, and
// each packet whose segments all arrived is found.
TEST(Extraction, ExactlyTheFullyCoveredPackets) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    auto packets = oracle::packet_list(rng, 1 + rng() % 16, 20, 1400);
    const auto b = make_block(0, 0, packets, small_params(1 + rng() % 120, 0));
    std::vector<bool> keep(b.ns);
    for (std::size_t i = 0; i < b.ns; ++i) keep[i] = rng() % 5 != 0;
    std::vector<Bytes> want;
    for (std::size_t k = 0; k < packets.size(); ++k) {
      const auto& pb = b.boundaries[k];
      bool ok = true;
      for (std::size_t s = pb.offset / b.ls; s <= (pb.offset + pb.length - 1) / b.ls; ++s) ok = ok && keep[s];
      if (ok) want.push_back(packets[k]);
    }
    ASSERT_EQ(extract_systematic(b.ns, b.ls, systematic_of(b, keep)), want) << trial;
  }
}
