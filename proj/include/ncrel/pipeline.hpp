#pragma once

// Master/worker encoder and decoder state machines. Nothing here owns a
// thread or a clock: callers pass the current time in, so the same objects
// run under the simulator's virtual clock and inside threaded_pipeline.hpp.

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ncrel/bytes.hpp"
#include "ncrel/codec.hpp"
#include "ncrel/framing.hpp"

namespace ncrel::pipeline {

using Duration = codec::Duration;

struct BufferList {
  std::vector<Bytes> packets;
  std::size_t length = 0;      // Lb
  Duration opened_at{};        // arrival of the first packet
};

/// Alg. 1 batching: a list is handed off once its length reaches Lt or Ti
/// has elapsed since its first packet arrived. Empty lists are never emitted.
class MasterBatcher {
 public:
  MasterBatcher(std::size_t lt, Duration ti) : lt_(lt), ti_(ti) {
    if (lt < 1) throw std::invalid_argument("MasterBatcher: lt must be >= 1");
    if (ti <= Duration::zero()) throw std::invalid_argument("MasterBatcher: ti must be > 0");
  }

  std::optional<BufferList> push(Bytes packet, Duration now) {
    if (current_.packets.empty()) current_.opened_at = now;
    current_.length += packet.size();
    current_.packets.push_back(std::move(packet));
    if (current_.length >= lt_) return take();
    return std::nullopt;
  }

  /// Time at which the open list must be flushed, if one is open.
  std::optional<Duration> deadline() const {
    if (current_.packets.empty()) return std::nullopt;
    return current_.opened_at + ti_;
  }

  std::optional<BufferList> poll(Duration now) {
    if (current_.packets.empty() || now < current_.opened_at + ti_) return std::nullopt;
    return take();
  }

  std::optional<BufferList> flush() {
    if (current_.packets.empty()) return std::nullopt;
    return take();
  }

  std::size_t pending_packets() const noexcept { return current_.packets.size(); }

 private:
  BufferList take() {
    BufferList out = std::move(current_);
    current_ = BufferList{};
    return out;
  }

  std::size_t lt_;
  Duration ti_;
  BufferList current_;
};

/// Round-robin assignment of buffer lists to encoder workers.
class RoundRobin {
 public:
  explicit RoundRobin(std::size_t np) : np_(np) {
    if (np < 1) throw std::invalid_argument("RoundRobin: np must be >= 1");
  }
  std::size_t next() noexcept {
    const auto w = next_;
    next_ = (next_ + 1) % np_;
    return w;
  }

 private:
  std::size_t np_;
  std::size_t next_ = 0;
};

struct EncoderCounters {
  std::uint64_t blocks = 0;
  std::uint64_t packets_encoded = 0;    // ingress packets whose block finished emission
  std::uint64_t systematic_sent = 0;
  std::uint64_t coded_sent = 0;
  std::uint64_t acks_applied = 0;
  std::uint64_t acks_ignored = 0;
};

/// One encoder worker: accepts buffer lists, turns each into a coding block
/// with the next BID, and emits its packets one at a time.
class EncoderWorker {
 public:
  struct Output {
    Bytes wire;
    Duration pause_before{};
    std::uint8_t bid = 0;
    codec::SegmentKind kind = codec::SegmentKind::kSystematic;
  };

  EncoderWorker(std::uint8_t tid, codec::CodecParams params, codec::SeedSource seeds)
      : tid_(tid), params_(std::move(params)), seeds_(std::move(seeds)) {}

  std::uint8_t tid() const noexcept { return tid_; }

  void enqueue(BufferList list) {
    queued_packets_ += list.packets.size();
    queue_.push_back(std::move(list));
  }

  /// No block in progress and nothing queued.
  bool idle() const noexcept { return !current_ && queue_.empty(); }

  /// Ingress packets accepted but whose block has not finished emission.
  std::size_t packets_pending() const noexcept { return queued_packets_ + current_packets_; }

  std::optional<std::uint8_t> current_bid() const {
    if (!current_) return std::nullopt;
    return current_->block().bid;
  }

  /// Next packet to put on the wire, or nullopt when there is nothing to send.
  std::optional<Output> next() {
    for (;;) {
      if (!current_) {
        if (queue_.empty()) return std::nullopt;
        start_block();
      }
      if (auto e = current_->next()) {
        Output out;
        out.bid = current_->block().bid;
        out.kind = e->kind;
        out.pause_before = e->pause_before;
        out.wire = framing::encapsulate(tid_, out.bid, current_->block().ns, *e);
        if (e->kind == codec::SegmentKind::kSystematic)
          ++counters_.systematic_sent;
        else
          ++counters_.coded_sent;
        if (current_->finished()) finish_block();
        return out;
      }
      finish_block();
    }
  }

  /// ACK for the block in progress cancels its remaining redundancy.
  void on_ack(const framing::Ack& ack) {
    if (current_ && ack.tid == tid_ && ack.bid == current_->block().bid && !current_->cancelled()) {
      current_->cancel();
      ++counters_.acks_applied;
      finish_block();
    } else {
      ++counters_.acks_ignored;
    }
  }

  const EncoderCounters& counters() const noexcept { return counters_; }

 private:
  void start_block() {
    BufferList list = std::move(queue_.front());
    queue_.pop_front();
    queued_packets_ -= list.packets.size();
    current_packets_ = list.packets.size();
    auto block = codec::make_block(tid_, next_bid_, list.packets, params_);
    next_bid_ = static_cast<std::uint8_t>(next_bid_ + 1);
    ++counters_.blocks;
    current_.emplace(std::move(block), params_, seeds_);
  }

  void finish_block() {
    counters_.packets_encoded += current_packets_;
    current_packets_ = 0;
    current_.reset();
  }

  std::uint8_t tid_;
  codec::CodecParams params_;
  codec::SeedSource seeds_;
  std::deque<BufferList> queue_;
  std::size_t queued_packets_ = 0;
  std::size_t current_packets_ = 0;
  std::optional<codec::BlockEncoder> current_;
  std::uint8_t next_bid_ = 0;
  EncoderCounters counters_;
};

struct DecoderCounters {
  std::uint64_t packets_ingested = 0;
  std::uint64_t dependent_rows = 0;
  std::uint64_t after_decode = 0;       // packets for an already decoded block
  std::uint64_t stale_drops = 0;        // packets for an older BID
  std::uint64_t inconsistent = 0;       // Ns/Ls disagree with the open block
  std::uint64_t blocks_decoded = 0;
  std::uint64_t blocks_dropped = 0;     // abandoned undecoded
  std::uint64_t packets_delivered = 0;  // from decoded blocks
  std::uint64_t packets_extracted = 0;  // from abandoned blocks
  std::uint64_t reassembly_errors = 0;
  std::uint64_t acks_sent = 0;
};

/// What a decoder worker hands back after one packet.
struct DecoderOutput {
  std::optional<framing::Ack> ack;
  std::vector<Bytes> packets;
};

/// One decoder worker: at most one open block; a newer BID abandons the open
/// block after salvaging whole packets from its systematic segments.
class DecoderWorker {
 public:
  explicit DecoderWorker(std::uint8_t tid) : tid_(tid) {}

  std::uint8_t tid() const noexcept { return tid_; }
  const DecoderCounters& counters() const noexcept { return counters_; }

  std::optional<std::uint8_t> current_bid() const {
    if (!open_) return std::nullopt;
    return open_->bid;
  }
  bool current_decoded() const noexcept { return open_ && open_->decoded; }
  std::size_t current_rank() const noexcept { return open_ ? open_->decoder.rank() : 0; }

  DecoderOutput on_packet(const framing::CodedPacket& pkt) {
    DecoderOutput out;
    const auto& h = pkt.header;
    if (open_ && h.bid != open_->bid) {
      if (!framing::bid_newer(h.bid, open_->bid)) {
        ++counters_.stale_drops;
        return out;
      }
      abandon(out.packets);
    }
    if (!open_) open_.emplace(h.bid, h.ns, pkt.segment.size());
    auto& b = *open_;
    if (b.decoded) {
      ++counters_.after_decode;
      return out;
    }
    if (h.ns != b.decoder.ns() || pkt.segment.size() != b.decoder.ls()) {
      ++counters_.inconsistent;
      return out;
    }
    ++counters_.packets_ingested;
    bool innovative = false;
    if (h.type == codec::SegmentKind::kSystematic) {
      std::vector<codec::Element> unit(h.ns, 0);
      unit[h.segn] = 1;
      innovative = b.decoder.ingest(unit, pkt.segment);
      b.systematic.push_back({h.segn, h.start, pkt.segment});
    } else {
      innovative = b.decoder.ingest(codec::coefficients_from_seed(h.seed, h.ns), pkt.segment);
    }
    if (!innovative) ++counters_.dependent_rows;
    if (b.decoder.decoded()) complete(out);
    return out;
  }

  /// Salvages the open block at shutdown.
  std::vector<Bytes> finish() {
    std::vector<Bytes> out;
    if (open_ && !open_->decoded) abandon(out);
    return out;
  }

 private:
  struct ReceivedSystematic {
    std::size_t index;
    std::uint16_t start;
    Bytes data;
  };

  struct OpenBlock {
    OpenBlock(std::uint8_t b, std::size_t ns, std::size_t ls) : bid(b), decoder(ns, ls) {}
    std::uint8_t bid;
    codec::BlockDecoder decoder;
    std::vector<ReceivedSystematic> systematic;
    bool decoded = false;
  };

  void complete(DecoderOutput& out) {
    auto& b = *open_;
    b.decoded = true;
    b.systematic.clear();
    ++counters_.blocks_decoded;
    try {
      auto packets = codec::recover_packets(b.decoder.payload());
      counters_.packets_delivered += packets.size();
      for (auto& p : packets) out.packets.push_back(std::move(p));
    } catch (const DecodeError&) {
      ++counters_.reassembly_errors;
    }
    out.ack = framing::Ack{tid_, b.bid};
    ++counters_.acks_sent;
  }

  void abandon(std::vector<Bytes>& sink) {
    auto& b = *open_;
    if (!b.decoded) {
      ++counters_.blocks_dropped;
      std::vector<codec::SystematicSegment> segs;
      segs.reserve(b.systematic.size());
      for (const auto& s : b.systematic) segs.push_back({s.index, s.start, s.data});
      auto packets = codec::extract_systematic(b.decoder.ns(), b.decoder.ls(), segs);
      counters_.packets_extracted += packets.size();
      for (auto& p : packets) sink.push_back(std::move(p));
    }
    open_.reset();
  }

  std::uint8_t tid_;
  std::optional<OpenBlock> open_;
  DecoderCounters counters_;
};

struct DispatchCounters {
  std::uint64_t routed = 0;
  std::uint64_t unknown_tid = 0;
  std::map<DecodeReason, std::uint64_t> decode_errors;

  std::uint64_t decode_error_total() const {
    std::uint64_t n = 0;
    for (const auto& [_, v] : decode_errors) n += v;
    return n;
  }
};

/// Decoder master: decapsulates wire packets and routes them by TID.
class DecoderMaster {
 public:
  explicit DecoderMaster(std::size_t np) : np_(np) {
    if (np < 1 || np > 256) throw std::invalid_argument("DecoderMaster: np must be in [1, 256]");
  }

  /// Returns the packet and its worker index, or nullopt if dropped.
  std::optional<framing::CodedPacket> route(ByteView wire) {
    framing::CodedPacket pkt;
    try {
      pkt = framing::decapsulate(wire);
    } catch (const DecodeError& e) {
      ++counters_.decode_errors[e.reason()];
      return std::nullopt;
    }
    if (pkt.header.tid >= np_) {
      ++counters_.unknown_tid;
      return std::nullopt;
    }
    ++counters_.routed;
    return pkt;
  }

  const DispatchCounters& counters() const noexcept { return counters_; }

 private:
  std::size_t np_;
  DispatchCounters counters_;
};

}  // namespace ncrel::pipeline
