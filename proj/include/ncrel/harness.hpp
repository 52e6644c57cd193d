#pragma once

// Stream (Iperf-like) and file (UFTP-like) trials over the simulated link,
// for each reliability configuration, plus the efficiency metrics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ncrel/bytes.hpp"
#include "ncrel/channel.hpp"
#include "ncrel/codec.hpp"
#include "ncrel/framing.hpp"
#include "ncrel/pipeline.hpp"
#include "ncrel/sim.hpp"

namespace ncrel::harness {

using sim::Time;
using namespace std::chrono_literals;

// ---------------------------------------------------------------------------
// Metrics

struct Rational {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Rational&, const Rational&) = default;
};

/// Upper bound on the effective code rate, reduced to lowest terms.
inline Rational code_rate(std::size_t ns, std::size_t nk, std::size_t nm) {
  if (ns < 1) throw std::invalid_argument("code_rate: ns must be >= 1");
  const std::uint64_t num = ns;
  const std::uint64_t den = ns + nk * nm;
  const auto g = std::gcd(num, den);
  return {num / g, den / g};
}

/// Approximate redundancy bandwidth (Nm / Nr) * o.
inline double redundancy_bandwidth(std::size_t nm, std::size_t nr, double offered_bps) {
  if (nr < 1) throw std::invalid_argument("redundancy_bandwidth: nr must be >= 1");
  return static_cast<double>(nm) / static_cast<double>(nr) * offered_bps;
}

/// T / (L + R); nullopt when L + R = 0 (saturated).
inline std::optional<double> tlr(double t, double l, double r) {
  if (l + r <= 0.0) return std::nullopt;
  return t / (l + r);
}

// ---------------------------------------------------------------------------
// Configuration

enum class Reliability { kRaw, kArq, kHarq, kHarqArq, kNc, kNcBest };

struct ReliabilitySpec {
  Reliability kind = Reliability::kRaw;
  std::size_t nm = 0;  // kNc only

  std::string name() const {
    switch (kind) {
      case Reliability::kRaw: return "raw";
      case Reliability::kArq: return "arq";
      case Reliability::kHarq: return "harq";
      case Reliability::kHarqArq: return "harq-arq";
      case Reliability::kNc: return "nc-" + std::to_string(nm);
      case Reliability::kNcBest: return "nc-best";
    }
    return "?";
  }

  static ReliabilitySpec parse(const std::string& s) {
    if (s == "raw") return {Reliability::kRaw, 0};
    if (s == "arq") return {Reliability::kArq, 0};
    if (s == "harq") return {Reliability::kHarq, 0};
    if (s == "harq-arq") return {Reliability::kHarqArq, 0};
    if (s == "nc-best") return {Reliability::kNcBest, 0};
    if (s.rfind("nc-", 0) == 0 && s.size() > 3) {
      std::size_t pos = 0;
      unsigned long v = 0;
      try {
        v = std::stoul(s.substr(3), &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == s.size() - 3) return {Reliability::kNc, v};
    }
    throw std::invalid_argument("unknown reliability '" + s + "'");
  }

  friend bool operator==(const ReliabilitySpec&, const ReliabilitySpec&) = default;
};

/// Redundancy ladder of the NC configurations.
inline const std::vector<std::size_t>& nc_ladder() {
  static const std::vector<std::size_t> kLadder{10, 15, 20, 24, 30, 40, 60, 120};
  return kLadder;
}

/// The 11 reliability configurations: raw, HARQ, HARQ-ARQ and the NC ladder.
inline std::vector<ReliabilitySpec> reliability_table() {
  std::vector<ReliabilitySpec> out{{Reliability::kRaw, 0}, {Reliability::kHarq, 0}, {Reliability::kHarqArq, 0}};
  for (auto nm : nc_ladder()) out.push_back({Reliability::kNc, nm});
  return out;
}

enum class TrialKind { kStream, kFile };

struct ExperimentConfig {
  std::string id = "trial";
  ReliabilitySpec reliability{};
  TrialKind kind = TrialKind::kStream;
  double offered_load_bps = 6e6;
  std::size_t packet_size = 1400;
  Time duration = 60s;              // stream trials
  std::size_t file_size = 50'000'000;  // file trials
  channel::ErasureChannelModel channel{};
  codec::CodecParams codec{};       // nm is taken from `reliability` for NC runs
  channel::HarqConfig harq{};
  channel::ArqConfig arq{};
  std::size_t np = 1;
  Time drain = 3s;                  // extra virtual time after the stream ends
  Time status_timeout = 2s;         // file trials: wait for a NACK before resending DONE
  std::size_t max_rounds = 64;      // file trials: cap on DONE transmissions
  double nc_best_margin = 0.05;     // nc-best considers rungs with CR <= 1 - p - margin
  std::uint64_t seed = 1;

  void validate() const {
    if (!(offered_load_bps > 0.0)) throw std::invalid_argument("offered_load must be > 0");
    if (packet_size < 32 || packet_size > 65535) throw std::invalid_argument("packet_size must be in [32, 65535]");
    if (kind == TrialKind::kStream && duration <= Time::zero()) throw std::invalid_argument("duration must be > 0");
    if (kind == TrialKind::kFile && file_size == 0) throw std::invalid_argument("file_size must be > 0");
    if (np < 1 || np > 256) throw std::invalid_argument("np must be in [1, 256]");
    if (drain < Time::zero()) throw std::invalid_argument("drain must be >= 0");
    if (status_timeout <= Time::zero()) throw std::invalid_argument("status_timeout must be > 0");
    if (max_rounds < 1) throw std::invalid_argument("max_rounds must be >= 1");
    if (reliability.kind == Reliability::kNc) {
      if (reliability.nm > 255) throw std::invalid_argument("nc Nm must be <= 255");
    }
    channel.validate();
    codec.validate();
    harq.validate();
    arq.validate();
  }
};

struct TrialCounters {
  std::uint64_t wire_packets = 0;
  std::uint64_t wire_erased = 0;
  std::uint64_t wire_bytes = 0;
  std::uint64_t nc_blocks = 0;
  std::uint64_t nc_decoded = 0;
  std::uint64_t nc_dropped = 0;
  std::uint64_t nc_extracted = 0;
  std::uint64_t nc_stale = 0;
  std::uint64_t acks_sent = 0;
  std::uint64_t acks_lost = 0;
  std::uint64_t decode_errors = 0;
  std::uint64_t harq_attempts = 0;
  std::uint64_t harq_lost = 0;
  std::uint64_t arq_retx = 0;
  std::uint64_t arq_discarded = 0;
  std::uint64_t arq_sync_resets = 0;
  std::uint64_t arq_window_stalls = 0;
  std::uint64_t corrupt = 0;     // deliveries whose content did not verify
  std::uint64_t duplicates = 0;
};

struct MetricsReport {
  std::string id;
  std::string reliability;
  std::size_t nm = 0;
  double p = 0.0;
  double offered_load = 0.0;
  TrialKind kind = TrialKind::kStream;
  std::uint64_t seed = 0;

  std::uint64_t sent = 0;
  std::uint64_t delivered = 0;
  std::uint64_t lost = 0;
  double throughput = 0.0;        // T, bits/s
  double loss_bps = 0.0;          // L
  double loss_pct = 0.0;
  double redundancy = 0.0;        // R, (Nm / Nr) * o
  double redundancy_exact = 0.0;  // measured extra wire bits per second
  std::optional<double> tlr_value;  // nullopt = saturated
  std::optional<double> transfer_delay;  // seconds, file trials
  std::size_t rounds = 0;
  TrialCounters counters;
  std::string error;
};

// ---------------------------------------------------------------------------
// Application packets: an IPv4 header, a tag, a sequence number and a
// content pattern that the sink verifies.

namespace app {

inline constexpr std::uint32_t kDataTag = 0x4E434454;  // "NCDT"
inline constexpr std::uint32_t kDoneTag = 0x4E43444E;  // "NCDN"
inline constexpr std::size_t kHeader = 32;

inline std::uint8_t fill(std::uint64_t seq, std::size_t i) {
  return static_cast<std::uint8_t>((seq * 131u + i * 7u + (seq >> 8)) & 0xFF);
}

inline Bytes make_packet(std::uint32_t tag, std::uint64_t seq, std::size_t size) {
  Bytes p(size, 0);
  p[0] = 0x45;
  store_be16(p, 2, static_cast<std::uint16_t>(size));
  p[8] = 64;
  p[9] = 17;
  store_be32(p, 12, 0x0A000001);
  store_be32(p, 16, 0x0A000002);
  store_be32(p, 20, tag);
  store_be32(p, 24, static_cast<std::uint32_t>(seq >> 32));
  store_be32(p, 28, static_cast<std::uint32_t>(seq));
  for (std::size_t i = kHeader; i < size; ++i) p[i] = fill(seq, i);
  return p;
}

struct Parsed {
  std::uint32_t tag;
  std::uint64_t seq;
  bool intact;
};

inline std::optional<Parsed> parse(ByteView p) {
  if (p.size() < kHeader || load_be16(p, 2) != p.size()) return std::nullopt;
  Parsed out{load_be32(p, 20), (std::uint64_t{load_be32(p, 24)} << 32) | load_be32(p, 28), true};
  for (std::size_t i = kHeader; i < p.size(); ++i) {
    if (p[i] != fill(out.seq, i)) {
      out.intact = false;
      break;
    }
  }
  return out;
}

}  // namespace app

// ---------------------------------------------------------------------------
// Underlays: carry application packets from sender to receiver.

namespace detail {

// Erasure streams on the data link. Keeping these apart lets configurations
// that share a seed see identical erasures on the traffic they share.
inline constexpr channel::FlowId kFlowApp = 0;
inline constexpr channel::FlowId kFlowSystematic = 1;
inline constexpr channel::FlowId kFlowCoded = 2;
inline constexpr channel::FlowId kFlowArqFeedback = 3;

struct Links {
  Links(const ExperimentConfig& cfg)
      : down(cfg.channel.rate_bps, cfg.channel.one_way_delay, cfg.channel.loss, sim::derive_seed(cfg.seed, 1)),
        up(cfg.channel.uplink_rate_bps, cfg.channel.one_way_delay, cfg.channel.loss, sim::derive_seed(cfg.seed, 2)),
        reverse(cfg.channel.uplink_rate_bps, cfg.channel.one_way_delay, channel::Bernoulli{cfg.channel.ack_loss_prob},
                sim::derive_seed(cfg.seed, 3)) {}

  channel::Link down;     // data
  channel::Link up;       // MAC feedback (ARQ), same erasure model as data
  channel::Link reverse;  // NC ACKs and file-transfer NACKs
};

class Underlay {
 public:
  using Sink = std::function<void(ByteView)>;
  virtual ~Underlay() = default;
  virtual void send(Bytes packet) = 0;
  /// Called once at the end of the trial; flushes receiver state.
  virtual void finish() {}
  virtual void collect(TrialCounters&) const {}
};

class TransportUnderlay final : public Underlay {
 public:
  TransportUnderlay(std::unique_ptr<channel::Transport> t, Sink sink, const channel::HarqTransport* harq = nullptr)
      : t_(std::move(t)), sink_(std::move(sink)), harq_(harq) {}

  void send(Bytes packet) override {
    auto shared = std::make_shared<const Bytes>(std::move(packet));
    const auto size = shared->size();
    t_->send(size, kFlowApp, [this, shared] { sink_(*shared); });
  }

  void collect(TrialCounters& c) const override {
    if (harq_) {
      c.harq_attempts += harq_->counters().attempts;
      c.harq_lost += harq_->counters().lost;
    }
  }

 private:
  std::unique_ptr<channel::Transport> t_;
  Sink sink_;
  const channel::HarqTransport* harq_;
};

class ArqUnderlay final : public Underlay {
 public:
  ArqUnderlay(sim::EventQueue& ev, std::unique_ptr<channel::Transport> data, std::unique_ptr<channel::Transport> fb,
              const channel::ArqConfig& cfg, Time discard_delay, Sink sink, const channel::HarqTransport* harq = nullptr,
              const channel::HarqTransport* harq_up = nullptr)
      : data_(std::move(data)), fb_(std::move(fb)),
        session_(ev, *data_, *fb_, cfg, kFlowApp, kFlowArqFeedback), sink_(std::move(sink)), harq_(harq),
        harq_up_(harq_up) {
    session_.set_discard_delay(discard_delay);
  }

  void send(Bytes packet) override {
    auto shared = std::make_shared<const Bytes>(std::move(packet));
    const auto size = shared->size();
    session_.submit(size, [this, shared](bool ok) {
      if (ok) sink_(*shared);
    });
  }

  void collect(TrialCounters& c) const override {
    const auto& a = session_.counters();
    c.arq_retx += a.retransmissions;
    c.arq_discarded += a.discarded;
    c.arq_sync_resets += a.sync_resets;
    c.arq_window_stalls += a.window_stalls;
    for (const auto* h : {harq_, harq_up_}) {
      if (!h) continue;
      c.harq_attempts += h->counters().attempts;
      c.harq_lost += h->counters().lost;
    }
  }

 private:
  std::unique_ptr<channel::Transport> data_;
  std::unique_ptr<channel::Transport> fb_;
  channel::ArqSession session_;
  Sink sink_;
  const channel::HarqTransport* harq_;
  const channel::HarqTransport* harq_up_;
};

/// The coded pipeline on top of the raw link: master batcher, Np encoder
/// workers paced by link occupancy, decoder master/workers, ACKs on the
/// reverse link.
class NcUnderlay final : public Underlay {
 public:
  NcUnderlay(sim::EventQueue& ev, Links& links, const ExperimentConfig& cfg, codec::CodecParams params, Sink sink)
      : ev_(ev), links_(links), batcher_(params.lt, params.ti), rr_(cfg.np), dmaster_(cfg.np), sink_(std::move(sink)),
        app_bytes_(0) {
    for (std::size_t w = 0; w < cfg.np; ++w) {
      const auto tid = static_cast<std::uint8_t>(w);
      enc_.emplace_back(tid, params, codec::RandomSeedSource(sim::derive_seed(cfg.seed, 16 + w)));
      dec_.emplace_back(tid);
    }
    busy_.assign(cfg.np, false);
    last_acked_.assign(cfg.np, std::nullopt);
  }

  void send(Bytes packet) override {
    app_bytes_ += packet.size();
    if (auto list = batcher_.push(std::move(packet), ev_.now())) dispatch(std::move(*list));
    arm();
  }

  void finish() override {
    for (auto& d : dec_)
      for (auto& p : d.finish()) sink_(p);
  }

  void collect(TrialCounters& c) const override {
    for (const auto& e : enc_) c.nc_blocks += e.counters().blocks;
    for (const auto& d : dec_) {
      const auto& k = d.counters();
      c.nc_decoded += k.blocks_decoded;
      c.nc_dropped += k.blocks_dropped;
      c.nc_extracted += k.packets_extracted;
      c.nc_stale += k.stale_drops;
      c.acks_sent += k.acks_sent;
    }
    c.acks_lost += links_.reverse.counters().erased;
    c.decode_errors += dmaster_.counters().decode_error_total();
  }

  std::uint64_t app_bytes() const noexcept { return app_bytes_; }
  std::uint64_t nc_wire_bytes() const noexcept { return wire_bytes_; }

 private:
  void arm() {
    const auto d = batcher_.deadline();
    if (!d || armed_ == d) return;
    armed_ = d;
    ev_.at(std::max(*d, ev_.now()), [this, when = *d] {
      if (armed_ == when) armed_.reset();
      if (auto list = batcher_.poll(ev_.now())) dispatch(std::move(*list));
      arm();
    });
  }

  void dispatch(pipeline::BufferList list) {
    const auto w = rr_.next();
    enc_[w].enqueue(std::move(list));
    if (!busy_[w]) step(w);
  }

  void step(std::size_t w) {
    auto out = enc_[w].next();
    if (!out) {
      busy_[w] = false;
      return;
    }
    busy_[w] = true;
    if (out->pause_before > Time::zero()) {
      auto shared = std::make_shared<pipeline::EncoderWorker::Output>(std::move(*out));
      ev_.after(shared->pause_before, [this, w, shared] {
        if (last_acked_[w] == shared->bid) {
          step(w);  // cancelled while paused
          return;
        }
        transmit(w, std::move(*shared));
      });
      return;
    }
    transmit(w, std::move(*out));
  }

  void transmit(std::size_t w, pipeline::EncoderWorker::Output out) {
    const auto flow = out.kind == codec::SegmentKind::kSystematic ? kFlowSystematic : kFlowCoded;
    wire_bytes_ += out.wire.size();
    if (auto at = links_.down.send(out.wire.size(), ev_.now(), flow)) {
      auto shared = std::make_shared<const Bytes>(std::move(out.wire));
      ev_.at(*at, [this, shared] { receive(*shared); });
    }
    ev_.at(links_.down.busy_until(), [this, w] { step(w); });
  }

  void receive(ByteView wire) {
    auto pkt = dmaster_.route(wire);
    if (!pkt) return;
    auto out = dec_[pkt->header.tid].on_packet(*pkt);
    for (auto& p : out.packets) sink_(p);
    if (out.ack) {
      const auto bytes = framing::encode_ack(*out.ack);
      if (auto at = links_.reverse.send(bytes.size(), ev_.now())) {
        ev_.at(*at, [this, bytes] {
          const auto ack = framing::decode_ack(bytes);
          if (ack.tid >= enc_.size()) return;
          last_acked_[ack.tid] = ack.bid;
          enc_[ack.tid].on_ack(ack);
        });
      }
    }
  }

  sim::EventQueue& ev_;
  Links& links_;
  pipeline::MasterBatcher batcher_;
  pipeline::RoundRobin rr_;
  std::vector<pipeline::EncoderWorker> enc_;
  std::vector<pipeline::DecoderWorker> dec_;
  pipeline::DecoderMaster dmaster_;
  std::vector<bool> busy_;
  std::vector<std::optional<std::uint8_t>> last_acked_;
  std::optional<Time> armed_;
  Sink sink_;
  std::uint64_t app_bytes_;
  std::uint64_t wire_bytes_ = 0;
};

inline std::unique_ptr<Underlay> make_underlay(sim::EventQueue& ev, Links& links, const ExperimentConfig& cfg,
                                               Underlay::Sink sink, NcUnderlay** nc_out) {
  using channel::HarqTransport;
  using channel::RawTransport;
  *nc_out = nullptr;
  switch (cfg.reliability.kind) {
    case Reliability::kRaw:
      return std::make_unique<TransportUnderlay>(std::make_unique<RawTransport>(ev, links.down), std::move(sink));
    case Reliability::kHarq: {
      auto t = std::make_unique<HarqTransport>(ev, links.down, cfg.harq, cfg.harq.downlink_retx_delay());
      const auto* h = t.get();
      return std::make_unique<TransportUnderlay>(std::move(t), std::move(sink), h);
    }
    case Reliability::kArq:
      return std::make_unique<ArqUnderlay>(ev, std::make_unique<RawTransport>(ev, links.down),
                                           std::make_unique<RawTransport>(ev, links.up), cfg.arq,
                                           cfg.channel.one_way_delay, std::move(sink));
    case Reliability::kHarqArq: {
      auto down = std::make_unique<HarqTransport>(ev, links.down, cfg.harq, cfg.harq.downlink_retx_delay());
      auto up = std::make_unique<HarqTransport>(ev, links.up, cfg.harq, cfg.harq.uplink_retx_delay());
      const auto* hd = down.get();
      const auto* hu = up.get();
      return std::make_unique<ArqUnderlay>(ev, std::move(down), std::move(up), cfg.arq, cfg.channel.one_way_delay,
                                           std::move(sink), hd, hu);
    }
    case Reliability::kNc: {
      auto params = cfg.codec;
      params.nm = cfg.reliability.nm;
      params.validate();
      auto nc = std::make_unique<NcUnderlay>(ev, links, cfg, params, std::move(sink));
      *nc_out = nc.get();
      return nc;
    }
    case Reliability::kNcBest:
      break;
  }
  throw std::logic_error("make_underlay: nc-best must be resolved first");
}

inline Time packet_interval(const ExperimentConfig& cfg, std::uint64_t k) {
  const double ns = static_cast<double>(k) * static_cast<double>(cfg.packet_size) * 8.0 * 1e9 / cfg.offered_load_bps;
  return Time(static_cast<std::int64_t>(std::llround(ns)));
}

inline void fill_common(MetricsReport& r, const ExperimentConfig& cfg) {
  r.id = cfg.id;
  r.reliability = cfg.reliability.name();
  r.nm = cfg.reliability.kind == Reliability::kNc ? cfg.reliability.nm : 0;
  r.p = channel::mean_loss(cfg.channel.loss);
  r.offered_load = cfg.offered_load_bps;
  r.kind = cfg.kind;
  r.seed = cfg.seed;
  if (cfg.reliability.kind == Reliability::kNc)
    r.redundancy = redundancy_bandwidth(cfg.codec.nk * cfg.reliability.nm, cfg.codec.nr, cfg.offered_load_bps);
}

inline void collect_links(TrialCounters& c, const Links& links) {
  c.wire_packets += links.down.counters().sent;
  c.wire_erased += links.down.counters().erased;
  c.wire_bytes += links.down.counters().bytes;
}

/// NC rungs eligible for nc-best at this channel; falls back to the
/// lowest-rate rung when none satisfies the bound.
inline std::vector<std::size_t> nc_best_candidates(const ExperimentConfig& cfg) {
  const double p = channel::mean_loss(cfg.channel.loss);
  std::vector<std::size_t> out;
  for (auto nm : nc_ladder()) {
    if (code_rate(cfg.codec.nr, cfg.codec.nk, nm).value() <= 1.0 - p - cfg.nc_best_margin + 1e-12) out.push_back(nm);
  }
  if (out.empty()) out.push_back(nc_ladder().back());
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Trials

MetricsReport run_stream_trial(const ExperimentConfig& cfg);
MetricsReport run_file_trial(const ExperimentConfig& cfg);

namespace detail {

template <class Run, class Better>
MetricsReport run_nc_best(const ExperimentConfig& cfg, Run run, Better better) {
  std::optional<MetricsReport> best;
  for (auto nm : nc_best_candidates(cfg)) {
    auto sub = cfg;
    sub.reliability = {Reliability::kNc, nm};
    auto r = run(sub);
    if (!best || better(r, *best)) best = std::move(r);
  }
  best->reliability = "nc-best";
  best->id = cfg.id;
  return *best;
}

}  // namespace detail

inline MetricsReport run_stream_trial(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.reliability.kind == Reliability::kNcBest) {
    return detail::run_nc_best(cfg, [](const ExperimentConfig& c) { return run_stream_trial(c); },
                               [](const MetricsReport& a, const MetricsReport& b) {
                                 return a.throughput > b.throughput;
                               });
  }

  sim::EventQueue ev;
  detail::Links links(cfg);
  std::uint64_t sent = 0;
  std::vector<bool> got;
  MetricsReport r;
  detail::fill_common(r, cfg);

  auto sink = [&](ByteView p) {
    auto a = app::parse(p);
    if (!a || a->tag != app::kDataTag || a->seq >= got.size() || !a->intact) {
      ++r.counters.corrupt;
      return;
    }
    if (got[a->seq]) {
      ++r.counters.duplicates;
      return;
    }
    got[a->seq] = true;
    ++r.delivered;
  };
  detail::NcUnderlay* nc = nullptr;
  auto underlay = detail::make_underlay(ev, links, cfg, sink, &nc);

  // Packets are generated for t in [0, duration).
  while (detail::packet_interval(cfg, sent) < cfg.duration) ++sent;
  got.assign(sent, false);
  for (std::uint64_t k = 0; k < sent; ++k) {
    ev.at(detail::packet_interval(cfg, k),
          [&, k] { underlay->send(app::make_packet(app::kDataTag, k, cfg.packet_size)); });
  }
  ev.run_until(cfg.duration + cfg.drain);
  underlay->finish();

  const double secs = sim::to_seconds(cfg.duration);
  const double bits = static_cast<double>(cfg.packet_size) * 8.0;
  r.sent = sent;
  r.lost = sent - r.delivered;
  r.throughput = static_cast<double>(r.delivered) * bits / secs;
  const double offered = static_cast<double>(sent) * bits / secs;
  r.loss_bps = offered - r.throughput;
  r.loss_pct = sent ? 100.0 * static_cast<double>(r.lost) / static_cast<double>(sent) : 0.0;
  if (nc) {
    const auto extra = static_cast<double>(nc->nc_wire_bytes()) - static_cast<double>(nc->app_bytes());
    r.redundancy_exact = std::max(0.0, extra * 8.0 / secs);
  }
  r.tlr_value = tlr(r.throughput, r.loss_bps, r.redundancy);
  underlay->collect(r.counters);
  detail::collect_links(r.counters, links);
  return r;
}

/// Round-based file transfer: send the pending packets at the offered rate,
/// then DONE; the receiver answers with the missing set on the reverse link.
/// The transfer completes when a NACK lists nothing.
inline MetricsReport run_file_trial(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.reliability.kind == Reliability::kNcBest) {
    return detail::run_nc_best(cfg, [](const ExperimentConfig& c) { return run_file_trial(c); },
                               [](const MetricsReport& a, const MetricsReport& b) {
                                 return *a.transfer_delay < *b.transfer_delay;
                               });
  }

  sim::EventQueue ev;
  detail::Links links(cfg);
  MetricsReport r;
  detail::fill_common(r, cfg);

  const std::uint64_t n = (cfg.file_size + cfg.packet_size - 1) / cfg.packet_size;
  std::vector<bool> got(n, false);
  std::uint64_t have = 0;
  std::uint64_t first_round_missing = 0;

  std::size_t round = 0;           // current sender round
  std::size_t done_sent = 0;
  std::size_t answered_round = 0;  // last round acted on by the sender
  std::optional<Time> completed;
  std::vector<std::uint64_t> pending(n);
  std::iota(pending.begin(), pending.end(), std::uint64_t{0});

  std::unique_ptr<detail::Underlay> underlay;
  std::function<void()> start_round;
  std::function<void(std::size_t)> send_done;

  auto on_nack = [&](std::size_t rnd, std::vector<std::uint64_t> missing) {
    if (rnd != round || answered_round == rnd || completed) return;
    answered_round = rnd;
    if (rnd == 1) first_round_missing = missing.size();
    if (missing.empty()) {
      completed = ev.now();
      return;
    }
    pending = std::move(missing);
    start_round();
  };

  auto sink = [&](ByteView p) {
    auto a = app::parse(p);
    if (!a || !a->intact) {
      ++r.counters.corrupt;
      return;
    }
    if (a->tag == app::kDoneTag) {
      const auto rnd = static_cast<std::size_t>(a->seq);
      std::vector<std::uint64_t> missing;
      for (std::uint64_t i = 0; i < n; ++i)
        if (!got[i]) missing.push_back(i);
      // Bitmap or explicit list, whichever is shorter.
      const std::size_t bytes = 28 + std::min<std::size_t>(4 * missing.size(), (n + 7) / 8);
      if (auto at = links.reverse.send(bytes, ev.now())) {
        ev.at(*at, [&, rnd, m = std::move(missing)]() mutable { on_nack(rnd, std::move(m)); });
      }
      return;
    }
    if (a->tag != app::kDataTag || a->seq >= n) {
      ++r.counters.corrupt;
      return;
    }
    if (got[a->seq]) {
      ++r.counters.duplicates;
      return;
    }
    got[a->seq] = true;
    ++have;
  };

  detail::NcUnderlay* nc = nullptr;
  underlay = detail::make_underlay(ev, links, cfg, sink, &nc);

  send_done = [&](std::size_t rnd) {
    if (completed || rnd != round || answered_round == rnd) return;
    if (++done_sent > cfg.max_rounds)
      throw std::runtime_error("file transfer did not complete within " + std::to_string(cfg.max_rounds) +
                               " status exchanges");
    underlay->send(app::make_packet(app::kDoneTag, rnd, app::kHeader + 32));
    ev.after(cfg.status_timeout, [&, rnd] { send_done(rnd); });
  };

  start_round = [&] {
    ++round;
    const Time t0 = ev.now();
    auto batch = std::make_shared<std::vector<std::uint64_t>>(std::move(pending));
    pending.clear();
    for (std::size_t k = 0; k < batch->size(); ++k) {
      ev.at(t0 + detail::packet_interval(cfg, k), [&, batch, k] {
        underlay->send(app::make_packet(app::kDataTag, (*batch)[k], cfg.packet_size));
        ++r.sent;
      });
    }
    ev.at(t0 + detail::packet_interval(cfg, batch->size()), [&, rnd = round] { send_done(rnd); });
  };

  ev.at(Time::zero(), start_round);
  ev.run();
  underlay->finish();

  if (!completed) throw std::runtime_error("file transfer ended without completion");
  const double delay = sim::to_seconds(*completed);
  r.transfer_delay = delay;
  r.rounds = round;
  r.delivered = have;
  r.lost = r.sent - std::min(r.sent, have);
  r.throughput = static_cast<double>(cfg.file_size) * 8.0 / delay;
  r.loss_pct = 100.0 * static_cast<double>(first_round_missing) / static_cast<double>(n);
  r.loss_bps = r.loss_pct / 100.0 * cfg.offered_load_bps;
  if (nc) {
    const auto extra = static_cast<double>(nc->nc_wire_bytes()) - static_cast<double>(nc->app_bytes());
    r.redundancy_exact = std::max(0.0, extra * 8.0 / delay);
  }
  r.tlr_value = tlr(r.throughput, r.loss_bps, r.redundancy);
  underlay->collect(r.counters);
  detail::collect_links(r.counters, links);
  return r;
}

/// Dispatches on the trial kind; errors are reported in the row, not thrown.
inline MetricsReport run_trial(const ExperimentConfig& cfg) {
  try {
    return cfg.kind == TrialKind::kStream ? run_stream_trial(cfg) : run_file_trial(cfg);
  } catch (const std::exception& e) {
    MetricsReport r;
    r.id = cfg.id;
    r.reliability = cfg.reliability.name();
    r.nm = cfg.reliability.nm;
    r.p = channel::mean_loss(cfg.channel.loss);
    r.offered_load = cfg.offered_load_bps;
    r.kind = cfg.kind;
    r.seed = cfg.seed;
    r.error = e.what();
    return r;
  }
}

}  // namespace ncrel::harness
