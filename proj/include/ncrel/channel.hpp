#pragma once

// Erasure links under virtual time, and the ARQ / CC-HARQ baseline models.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "ncrel/sim.hpp"

namespace ncrel::channel {

using sim::Time;
using namespace std::chrono_literals;

struct Bernoulli {
  double p = 0.0;
};

/// Two-state Markov erasure process; the state moves once per packet.
struct GilbertElliott {
  double p_good = 0.0;
  double p_bad = 1.0;
  double good_to_bad = 0.01;
  double bad_to_good = 0.1;
};

using LossModel = std::variant<Bernoulli, GilbertElliott>;

inline void validate(const LossModel& m) {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (const auto* b = std::get_if<Bernoulli>(&m)) {
    if (!prob(b->p)) throw std::invalid_argument("loss probability must be in [0, 1]");
  } else {
    const auto& g = std::get<GilbertElliott>(m);
    if (!prob(g.p_good) || !prob(g.p_bad) || !prob(g.good_to_bad) || !prob(g.bad_to_good))
      throw std::invalid_argument("Gilbert-Elliott probabilities must be in [0, 1]");
  }
}

/// Long-run erasure probability of a loss model.
inline double mean_loss(const LossModel& m) {
  if (const auto* b = std::get_if<Bernoulli>(&m)) return b->p;
  const auto& g = std::get<GilbertElliott>(m);
  const double denom = g.good_to_bad + g.bad_to_good;
  if (denom == 0.0) return g.p_good;
  const double pi_bad = g.good_to_bad / denom;
  return (1.0 - pi_bad) * g.p_good + pi_bad * g.p_bad;
}

struct ErasureChannelModel {
  LossModel loss = Bernoulli{};
  double rate_bps = 25.2e6;          // 64-QAM 5/6 downlink
  Time one_way_delay = 10ms;
  double ack_loss_prob = 0.0;        // reverse path used by NC ACKs and file-transfer NACKs
  double uplink_rate_bps = 1.344e6;  // QPSK 1/2 uplink

  void validate() const {
    channel::validate(loss);
    if (!(rate_bps > 0.0) || !(uplink_rate_bps > 0.0)) throw std::invalid_argument("link rates must be > 0");
    if (one_way_delay < Time::zero()) throw std::invalid_argument("one_way_delay must be >= 0");
    if (ack_loss_prob < 0.0 || ack_loss_prob > 1.0) throw std::invalid_argument("ack_loss_prob must be in [0, 1]");
  }
};

/// One independent erasure stream.
class ErasureProcess {
 public:
  ErasureProcess(LossModel model, std::uint64_t seed) : model_(std::move(model)), engine_(seed) {}

  /// Moves the channel state one packet forward and returns its loss probability.
  double advance() {
    if (const auto* b = std::get_if<Bernoulli>(&model_)) return b->p;
    const auto& g = std::get<GilbertElliott>(model_);
    if (bad_) {
      if (uniform() < g.bad_to_good) bad_ = false;
    } else {
      if (uniform() < g.good_to_bad) bad_ = true;
    }
    return bad_ ? g.p_bad : g.p_good;
  }

  bool draw(double q) {
    if (q <= 0.0) return false;
    if (q >= 1.0) return true;
    return uniform() < q;
  }

  bool erase() { return draw(advance()); }

 private:
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  LossModel model_;
  std::mt19937_64 engine_;
  bool bad_ = false;
};

/// Packets of different flows draw erasures from separate streams, so a
/// flow's erasure pattern does not depend on how much other traffic shares
/// the link. Runs that differ only in one flow stay paired on the others.
using FlowId = std::uint32_t;

struct LinkCounters {
  std::uint64_t sent = 0;
  std::uint64_t erased = 0;
  std::uint64_t bytes = 0;
};

/// FIFO point-to-point link: serialization at `rate_bps`, then propagation.
/// Erased packets still occupy the link.
class Link {
 public:
  Link(double rate_bps, Time delay, LossModel loss, std::uint64_t seed)
      : rate_bps_(rate_bps), delay_(delay), loss_(std::move(loss)), seed_(seed) {
    if (!(rate_bps > 0.0)) throw std::invalid_argument("Link: rate must be > 0");
    channel::validate(loss_);
  }

  Time delay() const noexcept { return delay_; }
  double rate_bps() const noexcept { return rate_bps_; }
  Time busy_until() const noexcept { return busy_until_; }
  const LinkCounters& counters() const noexcept { return counters_; }

  /// Reserves the link; returns when serialization of this packet ends.
  Time occupy(std::size_t bytes, Time now) {
    const Time start = std::max(now, busy_until_);
    busy_until_ = start + sim::serialization_time(bytes, rate_bps_);
    ++counters_.sent;
    counters_.bytes += bytes;
    return busy_until_;
  }

  /// Transmits one packet; arrival time, or nullopt if erased.
  std::optional<Time> send(std::size_t bytes, Time now, FlowId flow = 0) {
    const Time done = occupy(bytes, now);
    if (process(flow).erase()) {
      ++counters_.erased;
      return std::nullopt;
    }
    return done + delay_;
  }

  ErasureProcess& process(FlowId flow) {
    auto it = streams_.find(flow);
    if (it == streams_.end())
      it = streams_.emplace(flow, ErasureProcess(loss_, sim::derive_seed(seed_, flow))).first;
    return it->second;
  }

 private:
  double rate_bps_;
  Time delay_;
  LossModel loss_;
  std::uint64_t seed_;
  Time busy_until_{0};
  std::unordered_map<FlowId, ErasureProcess> streams_;
  LinkCounters counters_;
};

// ---------------------------------------------------------------------------
// Transports: something that carries a unit across a link and calls back on
// arrival. Losses are silent to the sender.

class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(std::size_t bytes, FlowId flow, std::function<void()> on_arrival) = 0;
};

class RawTransport final : public Transport {
 public:
  RawTransport(sim::EventQueue& events, Link& link) : events_(events), link_(link) {}

  void send(std::size_t bytes, FlowId flow, std::function<void()> on_arrival) override {
    if (auto t = link_.send(bytes, events_.now(), flow)) events_.at(*t, std::move(on_arrival));
  }

 private:
  sim::EventQueue& events_;
  Link& link_;
};

// ---------------------------------------------------------------------------
// CC-HARQ

/// Failure probability of attempt `k` (0-based) given the channel's
/// per-transmission loss probability `p`.
using CombiningModel = std::function<double(double p, unsigned k)>;

/// Chase combining: every retransmission multiplies the failure probability by p.
inline double chase_combining(double p, unsigned k) { return std::pow(p, static_cast<double>(k + 1)); }

struct HarqConfig {
  unsigned max_retx = 4;
  unsigned ul_ack_delay_frames = 3;
  unsigned dl_ack_delay_frames = 1;
  Time frame = 5ms;
  bool in_order = true;  // PDU SN reordering
  CombiningModel combining = chase_combining;

  /// Time from the end of a failed downlink attempt to its retransmission.
  Time downlink_retx_delay() const { return frame * (dl_ack_delay_frames + 1); }
  Time uplink_retx_delay() const { return frame * (ul_ack_delay_frames + 1); }

  void validate() const {
    if (frame <= Time::zero()) throw std::invalid_argument("HarqConfig: frame must be > 0");
    if (!combining) throw std::invalid_argument("HarqConfig: missing combining model");
  }
};

struct HarqCounters {
  std::uint64_t units = 0;
  std::uint64_t attempts = 0;
  std::uint64_t delivered = 0;
  std::uint64_t lost = 0;
};

/// Releases sequence-numbered outcomes strictly in order.
class InOrderRelease {
 public:
  using Sink = std::function<void(std::uint64_t seq, bool ok)>;
  explicit InOrderRelease(Sink sink) : sink_(std::move(sink)) {}

  void resolve(std::uint64_t seq, bool ok) {
    pending_[seq] = ok;
    while (!pending_.empty() && pending_.begin()->first == next_) {
      const bool good = pending_.begin()->second;
      pending_.erase(pending_.begin());
      sink_(next_++, good);
    }
  }

  std::uint64_t next() const noexcept { return next_; }

 private:
  Sink sink_;
  std::map<std::uint64_t, bool> pending_;
  std::uint64_t next_ = 0;
};

/// Per-unit stop-and-wait HARQ processes sharing one link. A unit is
/// retransmitted after the ACK/NACK delay until it gets through or
/// max_retx retransmissions are spent.
class HarqTransport final : public Transport {
 public:
  HarqTransport(sim::EventQueue& events, Link& link, HarqConfig cfg, Time retx_delay)
      : events_(events), link_(link), cfg_(std::move(cfg)), retx_delay_(retx_delay),
        release_([this](std::uint64_t seq, bool ok) { on_release(seq, ok); }) {
    cfg_.validate();
  }

  void send(std::size_t bytes, FlowId flow, std::function<void()> on_arrival) override {
    const std::uint64_t seq = next_seq_++;
    ++counters_.units;
    units_.emplace(seq, Unit{bytes, flow, std::move(on_arrival)});
    attempt(seq, 0);
  }

  /// Outcome callback for every unit, in release order; used for loss accounting.
  void on_outcome(std::function<void(bool delivered)> fn) { outcome_ = std::move(fn); }

  const HarqCounters& counters() const noexcept { return counters_; }

 private:
  struct Unit {
    std::size_t bytes;
    FlowId flow;
    std::function<void()> on_arrival;
  };

  void attempt(std::uint64_t seq, unsigned k) {
    auto& u = units_.at(seq);
    ++counters_.attempts;
    const Time done = link_.occupy(u.bytes, events_.now());
    auto& proc = link_.process(u.flow);
    const double p = proc.advance();
    const bool failed = proc.draw(cfg_.combining(p, k));
    if (!failed) {
      ++counters_.delivered;
      events_.at(done + link_.delay(), [this, seq] { resolve(seq, true); });
    } else if (k < cfg_.max_retx) {
      events_.at(done + retx_delay_, [this, seq, k] { attempt(seq, k + 1); });
    } else {
      ++counters_.lost;
      events_.at(done + link_.delay(), [this, seq] { resolve(seq, false); });
    }
  }

  void resolve(std::uint64_t seq, bool ok) {
    if (cfg_.in_order) {
      release_.resolve(seq, ok);
    } else {
      on_release(seq, ok);
    }
  }

  void on_release(std::uint64_t seq, bool ok) {
    auto node = units_.extract(seq);
    if (outcome_) outcome_(ok);
    if (ok && node.mapped().on_arrival) node.mapped().on_arrival();
  }

  sim::EventQueue& events_;
  Link& link_;
  HarqConfig cfg_;
  Time retx_delay_;
  InOrderRelease release_;
  std::unordered_map<std::uint64_t, Unit> units_;
  std::uint64_t next_seq_ = 0;
  std::function<void(bool)> outcome_;
  HarqCounters counters_;
};

// ---------------------------------------------------------------------------
// ARQ (selective repeat with block lifetime)

struct ArqConfig {
  Time retry_timeout = 100ms;
  std::size_t block_size = 256;
  std::size_t window_size = 1024;
  Time block_lifetime = 500ms;
  bool in_order = true;
  Time rx_purge_timeout = 500ms;
  Time sync_loss_timeout = 1000ms;
  std::size_t feedback_bytes = 8;  // one selective ACK on the uplink

  void validate() const {
    if (retry_timeout <= Time::zero() || block_lifetime <= Time::zero() || rx_purge_timeout <= Time::zero() ||
        sync_loss_timeout <= Time::zero())
      throw std::invalid_argument("ArqConfig: timers must be > 0");
    if (block_size < 1 || window_size < 1 || feedback_bytes < 1)
      throw std::invalid_argument("ArqConfig: sizes must be >= 1");
  }
};

struct ArqCounters {
  std::uint64_t blocks = 0;
  std::uint64_t transmissions = 0;
  std::uint64_t retransmissions = 0;
  std::uint64_t acked = 0;
  std::uint64_t discarded = 0;         // lifetime expired at the sender
  std::uint64_t received = 0;          // distinct blocks reaching the receiver
  std::uint64_t duplicates = 0;
  std::uint64_t purged = 0;            // skipped by the receiver
  std::uint64_t delivered_blocks = 0;  // released upward
  std::uint64_t sync_resets = 0;
  std::uint64_t acks_sent = 0;
  std::uint64_t window_stalls = 0;     // new blocks held back by the window
};

/// Sender and receiver ARQ state machines joined by a data transport and a
/// feedback transport. SDUs are split into fixed-size blocks; an SDU is
/// delivered when all its blocks are released, lost if any is discarded.
class ArqSession {
 public:
  using Done = std::function<void(bool delivered)>;

  ArqSession(sim::EventQueue& events, Transport& data, Transport& feedback, ArqConfig cfg,
             FlowId data_flow = 0, FlowId ack_flow = 1)
      : events_(events), data_(data), feedback_(feedback), cfg_(std::move(cfg)), data_flow_(data_flow),
        ack_flow_(ack_flow) {
    cfg_.validate();
  }

  ArqSession(const ArqSession&) = delete;
  ArqSession& operator=(const ArqSession&) = delete;

  void submit(std::size_t bytes, Done on_done) {
    const std::size_t nblocks = std::max<std::size_t>(1, (bytes + cfg_.block_size - 1) / cfg_.block_size);
    const std::uint64_t sdu = next_sdu_++;
    sdus_.emplace(sdu, Sdu{nblocks, false, std::move(on_done)});
    for (std::size_t i = 0; i < nblocks; ++i) {
      const std::size_t len = std::min(cfg_.block_size, bytes - std::min(bytes, i * cfg_.block_size));
      const std::uint64_t seq = next_seq_++;
      block_sdu_.emplace(seq, sdu);
      pending_.push_back({seq, std::max<std::size_t>(len, 1)});
      ++counters_.blocks;
    }
    pump();
  }

  /// No block waiting, in flight or held at the receiver.
  bool idle() const noexcept { return pending_.empty() && outstanding_.empty() && sdus_.empty(); }

  const ArqCounters& counters() const noexcept { return counters_; }

 private:
  struct Sdu {
    std::size_t blocks_left;
    bool lost;
    Done on_done;
  };
  struct Pending {
    std::uint64_t seq;
    std::size_t bytes;
  };
  struct Outstanding {
    std::size_t bytes;
    Time first_tx;
    Time last_tx;
  };

  // --- sender

  std::uint64_t window_start() const {
    if (!outstanding_.empty()) return outstanding_.begin()->first;
    if (!pending_.empty()) return pending_.front().seq;
    return next_seq_;
  }

  void pump() {
    while (!pending_.empty()) {
      const auto [seq, bytes] = pending_.front();
      if (seq >= window_start() + cfg_.window_size) {
        ++counters_.window_stalls;
        break;
      }
      pending_.pop_front();
      const Time now = events_.now();
      outstanding_.emplace(seq, Outstanding{bytes, now, now});
      if (outstanding_.size() == 1) note_window_start();
      transmit(seq);
      events_.at(now + cfg_.block_lifetime, [this, seq] { expire(seq); });
    }
  }

  void transmit(std::uint64_t seq) {
    auto& o = outstanding_.at(seq);
    o.last_tx = events_.now();
    ++counters_.transmissions;
    data_.send(o.bytes, data_flow_, [this, seq] { on_block(seq); });
    events_.at(o.last_tx + cfg_.retry_timeout, [this, seq, tx = o.last_tx] { retry(seq, tx); });
  }

  void retry(std::uint64_t seq, Time tx) {
    auto it = outstanding_.find(seq);
    if (it == outstanding_.end() || it->second.last_tx != tx) return;
    if (events_.now() >= it->second.first_tx + cfg_.block_lifetime) return;
    ++counters_.retransmissions;
    transmit(seq);
  }

  void expire(std::uint64_t seq) {
    if (!outstanding_.count(seq)) return;
    ++counters_.discarded;
    drop_outstanding(seq);
  }

  void drop_outstanding(std::uint64_t seq) {
    const auto before = window_start();
    outstanding_.erase(seq);
    // The discard notice travels with the data and is not lost.
    events_.after(link_delay_hint(), [this, seq] { on_discard(seq); });
    after_window_change(before);
  }

  void on_ack(std::uint64_t seq) {
    if (!outstanding_.count(seq)) return;
    const auto before = window_start();
    outstanding_.erase(seq);
    ++counters_.acked;
    after_window_change(before);
  }

  void after_window_change(std::uint64_t before) {
    if (window_start() != before) note_window_start();
    pump();
  }

  void note_window_start() {
    const auto ws = window_start();
    const auto epoch = ++window_epoch_;
    events_.after(cfg_.sync_loss_timeout, [this, ws, epoch] {
      if (epoch != window_epoch_ || outstanding_.empty() || window_start() != ws) return;
      ++counters_.sync_resets;
      drop_outstanding(ws);
    });
  }

  Time link_delay_hint() const { return discard_delay_; }

  // --- receiver

  void on_block(std::uint64_t seq) {
    ++counters_.acks_sent;
    feedback_.send(cfg_.feedback_bytes, ack_flow_, [this, seq] { on_ack(seq); });
    if (seq < rx_next_ || rx_state_.count(seq)) {
      ++counters_.duplicates;
      return;
    }
    ++counters_.received;
    rx_state_[seq] = true;
    if (!cfg_.in_order) {
      release(seq, true);
      rx_state_.erase(seq);
      return;
    }
    const bool advanced = seq == rx_next_;
    drain();
    if (!advanced) {
      events_.after(cfg_.rx_purge_timeout, [this, seq] { purge_through(seq); });
    }
  }

  void on_discard(std::uint64_t seq) {
    if (seq < rx_next_ || rx_state_.count(seq)) return;
    ++counters_.purged;
    if (!cfg_.in_order) {
      release(seq, false);
      return;
    }
    rx_state_[seq] = false;
    drain();
  }

  void purge_through(std::uint64_t seq) {
    if (seq < rx_next_) return;
    for (std::uint64_t s = rx_next_; s < seq; ++s) {
      if (!rx_state_.count(s)) {
        rx_state_[s] = false;
        ++counters_.purged;
      }
    }
    drain();
  }

  void drain() {
    while (!rx_state_.empty() && rx_state_.begin()->first == rx_next_) {
      const bool ok = rx_state_.begin()->second;
      rx_state_.erase(rx_state_.begin());
      release(rx_next_++, ok);
    }
  }

  void release(std::uint64_t seq, bool ok) {
    auto bs = block_sdu_.find(seq);
    if (bs == block_sdu_.end()) return;
    const auto sdu_id = bs->second;
    block_sdu_.erase(bs);
    if (ok) ++counters_.delivered_blocks;
    auto it = sdus_.find(sdu_id);
    if (it == sdus_.end()) return;
    auto& sdu = it->second;
    if (!ok) sdu.lost = true;
    if (!cfg_.in_order && sdu.lost) {
      // Out-of-order mode reports a loss as soon as it is known.
      auto done = std::move(sdu.on_done);
      sdus_.erase(it);
      drop_remaining_blocks(sdu_id);
      if (done) done(false);
      return;
    }
    if (--sdu.blocks_left == 0) {
      auto done = std::move(sdu.on_done);
      const bool delivered = !sdu.lost;
      sdus_.erase(it);
      if (done) done(delivered);
    }
  }

  void drop_remaining_blocks(std::uint64_t sdu_id) {
    for (auto it = block_sdu_.begin(); it != block_sdu_.end();) {
      if (it->second == sdu_id)
        it = block_sdu_.erase(it);
      else
        ++it;
    }
  }

 public:
  /// Delay of the reliable discard notice from sender to receiver.
  void set_discard_delay(Time d) { discard_delay_ = d; }

 private:
  sim::EventQueue& events_;
  Transport& data_;
  Transport& feedback_;
  ArqConfig cfg_;
  FlowId data_flow_;
  FlowId ack_flow_;
  Time discard_delay_{0};

  std::deque<Pending> pending_;
  std::map<std::uint64_t, Outstanding> outstanding_;
  std::uint64_t window_epoch_ = 0;
  std::map<std::uint64_t, bool> rx_state_;
  std::uint64_t rx_next_ = 0;
  std::unordered_map<std::uint64_t, std::uint64_t> block_sdu_;
  std::unordered_map<std::uint64_t, Sdu> sdus_;
  std::uint64_t next_seq_ = 0;
  std::uint64_t next_sdu_ = 0;
  ArqCounters counters_;
};

// ---------------------------------------------------------------------------
// Stand-alone transfers over a fresh simulator, used to check the baseline
// models against their analytic behaviour.

struct TransferResult {
  std::uint64_t units = 0;
  std::uint64_t delivered = 0;
  std::vector<bool> delivered_mask;       // per unit, submission order
  std::vector<std::uint64_t> delivery_order;
  Time finished{0};
  HarqCounters harq;
  ArqCounters arq;
  LinkCounters link;

  double delivery_ratio() const { return units ? static_cast<double>(delivered) / static_cast<double>(units) : 0.0; }
};

/// Sends `units` packets of `bytes` each, one per `interval`, over a plain link.
inline TransferResult raw_transfer(std::size_t units, std::size_t bytes, Time interval,
                                   const ErasureChannelModel& model, std::uint64_t seed) {
  model.validate();
  sim::EventQueue ev;
  Link link(model.rate_bps, model.one_way_delay, model.loss, sim::derive_seed(seed, 1));
  RawTransport t(ev, link);
  TransferResult r;
  r.units = units;
  r.delivered_mask.assign(units, false);
  for (std::size_t i = 0; i < units; ++i) {
    ev.at(interval * static_cast<std::int64_t>(i), [&, i] {
      t.send(bytes, 0, [&, i] {
        r.delivered_mask[i] = true;
        r.delivery_order.push_back(i);
        ++r.delivered;
        r.finished = ev.now();
      });
    });
  }
  ev.run();
  r.link = link.counters();
  return r;
}

inline TransferResult harq_transfer(std::size_t units, std::size_t bytes, Time interval, const HarqConfig& cfg,
                                    const ErasureChannelModel& model, std::uint64_t seed) {
  model.validate();
  sim::EventQueue ev;
  Link link(model.rate_bps, model.one_way_delay, model.loss, sim::derive_seed(seed, 1));
  HarqTransport t(ev, link, cfg, cfg.downlink_retx_delay());
  TransferResult r;
  r.units = units;
  r.delivered_mask.assign(units, false);
  for (std::size_t i = 0; i < units; ++i) {
    ev.at(interval * static_cast<std::int64_t>(i), [&, i] {
      t.send(bytes, 0, [&, i] {
        r.delivered_mask[i] = true;
        r.delivery_order.push_back(i);
        ++r.delivered;
        r.finished = ev.now();
      });
    });
  }
  ev.run();
  r.harq = t.counters();
  r.link = link.counters();
  return r;
}

/// ARQ over the data link; feedback rides the uplink with the same loss
/// model. Each unit is one SDU of `bytes`.
inline TransferResult arq_transfer(std::size_t units, std::size_t bytes, Time interval, const ArqConfig& cfg,
                                   const ErasureChannelModel& model, std::uint64_t seed) {
  model.validate();
  sim::EventQueue ev;
  Link down(model.rate_bps, model.one_way_delay, model.loss, sim::derive_seed(seed, 1));
  Link up(model.uplink_rate_bps, model.one_way_delay, model.loss, sim::derive_seed(seed, 2));
  RawTransport data(ev, down);
  RawTransport fb(ev, up);
  ArqSession arq(ev, data, fb, cfg);
  arq.set_discard_delay(model.one_way_delay);
  TransferResult r;
  r.units = units;
  r.delivered_mask.assign(units, false);
  for (std::size_t i = 0; i < units; ++i) {
    ev.at(interval * static_cast<std::int64_t>(i), [&, i] {
      arq.submit(bytes, [&, i](bool ok) {
        if (!ok) return;
        r.delivered_mask[i] = true;
        r.delivery_order.push_back(i);
        ++r.delivered;
        r.finished = ev.now();
      });
    });
  }
  ev.run();
  r.arq = arq.counters();
  r.link = down.counters();
  return r;
}

}  // namespace ncrel::channel
