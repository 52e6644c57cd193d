#pragma once

// The encoder and decoder processes on real threads: one master and Np
// workers per side, joined only by blocking queues. The state machines are
// the ones in pipeline.hpp; this file adds threads and the wall clock.

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "ncrel/bytes.hpp"
#include "ncrel/codec.hpp"
#include "ncrel/framing.hpp"
#include "ncrel/pipeline.hpp"
#include "ncrel/sim.hpp"

namespace ncrel::threaded {

/// Unbounded FIFO; pop blocks until an item arrives or the queue is closed
/// and drained.
template <class T>
class BlockingQueue {
 public:
  void push(T v) {
    {
      std::lock_guard lk(mu_);
      if (closed_) return;
      q_.push_back(std::move(v));
    }
    cv_.notify_one();
  }

  void close() {
    {
      std::lock_guard lk(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  std::optional<T> pop() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return !q_.empty() || closed_; });
    return take(lk);
  }

  /// Waits at most until `deadline`; nullopt on timeout or when closed and empty.
  template <class Clock, class Dur>
  std::optional<T> pop_until(std::chrono::time_point<Clock, Dur> deadline) {
    std::unique_lock lk(mu_);
    cv_.wait_until(lk, deadline, [&] { return !q_.empty() || closed_; });
    return take(lk);
  }

  std::optional<T> try_pop() {
    std::unique_lock lk(mu_);
    return take(lk);
  }

  bool closed_and_empty() const {
    std::lock_guard lk(mu_);
    return closed_ && q_.empty();
  }

 private:
  std::optional<T> take(std::unique_lock<std::mutex>&) {
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> q_;
  bool closed_ = false;
};

using WireSink = std::function<void(Bytes)>;
using PacketSink = std::function<void(Bytes)>;

/// Sinks are called from worker threads and must be thread-safe.
class ThreadedEncoder {
 public:
  ThreadedEncoder(codec::CodecParams params, std::size_t np, std::uint64_t seed, WireSink wire)
      : params_(std::move(params)), wire_(std::move(wire)) {
    params_.validate();
    if (np < 1 || np > 256) throw std::invalid_argument("ThreadedEncoder: np must be in [1, 256]");
    for (std::size_t w = 0; w < np; ++w) inboxes_.push_back(std::make_unique<BlockingQueue<WorkerItem>>());
    for (std::size_t w = 0; w < np; ++w) {
      workers_.emplace_back([this, w, seed] {
        worker_loop(w, codec::RandomSeedSource(sim::derive_seed(seed, 16 + w)));
      });
    }
    master_ = std::jthread([this] { master_loop(); });
  }

  ThreadedEncoder(const ThreadedEncoder&) = delete;
  ThreadedEncoder& operator=(const ThreadedEncoder&) = delete;
  ~ThreadedEncoder() { close(); }

  void submit(Bytes packet) { ingress_.push(std::move(packet)); }

  /// Wire ACK from the reverse path; malformed ACKs are ignored.
  void on_ack_wire(ByteView wire) {
    framing::Ack ack;
    try {
      ack = framing::decode_ack(wire);
    } catch (const DecodeError&) {
      return;
    }
    if (ack.tid < inboxes_.size()) inboxes_[ack.tid]->push(ack);
  }

  /// Flushes the open buffer list, lets every worker finish its blocks, and joins.
  void close() {
    ingress_.close();
    if (master_.joinable()) master_.join();
    for (auto& w : workers_)
      if (w.joinable()) w.join();
  }

 private:
  using WorkerItem = std::variant<pipeline::BufferList, framing::Ack>;
  using Clock = std::chrono::steady_clock;

  codec::Duration since_start() const { return std::chrono::duration_cast<codec::Duration>(Clock::now() - t0_); }

  void master_loop() {
    pipeline::MasterBatcher batcher(params_.lt, params_.ti);
    pipeline::RoundRobin rr(inboxes_.size());
    auto hand_off = [&](pipeline::BufferList l) { inboxes_[rr.next()]->push(std::move(l)); };
    for (;;) {
      std::optional<Bytes> pkt;
      if (auto d = batcher.deadline()) {
        pkt = ingress_.pop_until(t0_ + *d);
      } else {
        pkt = ingress_.pop();
      }
      if (pkt) {
        if (auto l = batcher.push(std::move(*pkt), since_start())) hand_off(std::move(*l));
        continue;
      }
      if (ingress_.closed_and_empty()) break;
      if (auto l = batcher.poll(since_start())) hand_off(std::move(*l));
    }
    if (auto l = batcher.flush()) hand_off(std::move(*l));
    for (auto& q : inboxes_) q->close();
  }

  void worker_loop(std::size_t w, codec::SeedSource seeds) {
    pipeline::EncoderWorker enc(static_cast<std::uint8_t>(w), params_, std::move(seeds));
    auto& inbox = *inboxes_[w];
    auto apply = [&](WorkerItem item) {
      if (auto* l = std::get_if<pipeline::BufferList>(&item))
        enc.enqueue(std::move(*l));
      else
        enc.on_ack(std::get<framing::Ack>(item));
    };
    for (;;) {
      while (auto item = inbox.try_pop()) apply(std::move(*item));
      if (enc.idle()) {
        auto item = inbox.pop();
        if (!item) break;
        apply(std::move(*item));
        continue;
      }
      auto out = enc.next();
      if (!out) continue;
      if (out->pause_before > codec::Duration::zero()) {
        std::this_thread::sleep_for(out->pause_before);
        bool cancelled = false;
        while (auto item = inbox.try_pop()) {
          if (auto* a = std::get_if<framing::Ack>(&*item); a && a->bid == out->bid) cancelled = true;
          apply(std::move(*item));
        }
        if (cancelled) continue;
      }
      wire_(std::move(out->wire));
    }
  }

  codec::CodecParams params_;
  WireSink wire_;
  Clock::time_point t0_ = Clock::now();
  BlockingQueue<Bytes> ingress_;
  std::vector<std::unique_ptr<BlockingQueue<WorkerItem>>> inboxes_;
  std::vector<std::jthread> workers_;
  std::jthread master_;
};

class ThreadedDecoder {
 public:
  using AckSink = std::function<void(Bytes)>;

  ThreadedDecoder(std::size_t np, PacketSink packets, AckSink acks)
      : np_(np), packets_(std::move(packets)), acks_(std::move(acks)) {
    if (np < 1 || np > 256) throw std::invalid_argument("ThreadedDecoder: np must be in [1, 256]");
    for (std::size_t w = 0; w < np; ++w) inboxes_.push_back(std::make_unique<BlockingQueue<framing::CodedPacket>>());
    counters_.resize(np);
    for (std::size_t w = 0; w < np; ++w) workers_.emplace_back([this, w] { worker_loop(w); });
    master_ = std::jthread([this] { master_loop(); });
  }

  ThreadedDecoder(const ThreadedDecoder&) = delete;
  ThreadedDecoder& operator=(const ThreadedDecoder&) = delete;
  ~ThreadedDecoder() { close(); }

  void receive(Bytes wire) { ingress_.push(std::move(wire)); }

  /// Drains queued packets, salvages open blocks, and joins.
  void close() {
    ingress_.close();
    if (master_.joinable()) master_.join();
    for (auto& w : workers_)
      if (w.joinable()) w.join();
  }

  /// Valid after close().
  pipeline::DecoderCounters worker_counters(std::size_t w) const { return counters_.at(w); }
  pipeline::DispatchCounters dispatch_counters() const { return dispatch_; }

 private:
  void master_loop() {
    pipeline::DecoderMaster master(np_);
    while (auto wire = ingress_.pop()) {
      if (auto pkt = master.route(*wire)) inboxes_[pkt->header.tid]->push(std::move(*pkt));
    }
    dispatch_ = master.counters();
    for (auto& q : inboxes_) q->close();
  }

  void worker_loop(std::size_t w) {
    pipeline::DecoderWorker dec(static_cast<std::uint8_t>(w));
    while (auto pkt = inboxes_[w]->pop()) {
      auto out = dec.on_packet(*pkt);
      for (auto& p : out.packets) packets_(std::move(p));
      if (out.ack) acks_(framing::encode_ack(*out.ack));
    }
    for (auto& p : dec.finish()) packets_(std::move(p));
    counters_[w] = dec.counters();
  }

  std::size_t np_;
  PacketSink packets_;
  AckSink acks_;
  BlockingQueue<Bytes> ingress_;
  std::vector<std::unique_ptr<BlockingQueue<framing::CodedPacket>>> inboxes_;
  std::vector<pipeline::DecoderCounters> counters_;
  pipeline::DispatchCounters dispatch_;
  std::vector<std::jthread> workers_;
  std::jthread master_;
};

}  // namespace ncrel::threaded
