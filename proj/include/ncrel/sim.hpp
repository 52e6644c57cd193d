#pragma once

// Discrete-event core with a virtual nanosecond clock.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <queue>
#include <stdexcept>
#include <utility>
#include <vector>

namespace ncrel::sim {

using Time = std::chrono::nanoseconds;

inline Time from_seconds(double s) { return Time(static_cast<std::int64_t>(std::llround(s * 1e9))); }
inline double to_seconds(Time t) { return static_cast<double>(t.count()) * 1e-9; }

/// Time to clock `bytes` onto a link of `rate_bps`, rounded up to a nanosecond.
inline Time serialization_time(std::size_t bytes, double rate_bps) {
  const double ns = static_cast<double>(bytes) * 8.0 * 1e9 / rate_bps;
  return Time(static_cast<std::int64_t>(std::ceil(ns - 1e-6)));
}

/// Events at equal times run in scheduling order, so a run is a pure
/// function of its inputs.
class EventQueue {
 public:
  using Action = std::function<void()>;

  Time now() const noexcept { return now_; }
  bool empty() const noexcept { return heap_.empty(); }
  std::uint64_t processed() const noexcept { return processed_; }

  void at(Time t, Action a) {
    if (t < now_) throw std::logic_error("EventQueue: scheduling in the past");
    heap_.push(Entry{t, seq_++, std::move(a)});
  }

  void after(Time d, Action a) { at(now_ + d, std::move(a)); }

  bool step() {
    if (heap_.empty()) return false;
    // Moving out of top() is safe: the entry is popped before it is touched again.
    Entry e = std::move(const_cast<Entry&>(heap_.top()));
    heap_.pop();
    now_ = e.time;
    ++processed_;
    e.action();
    return true;
  }

  void run() {
    while (step()) {
    }
  }

  /// Runs every event at or before `horizon`, then parks the clock there.
  void run_until(Time horizon) {
    while (!heap_.empty() && heap_.top().time <= horizon) step();
    if (now_ < horizon) now_ = horizon;
  }

 private:
  struct Entry {
    Time time;
    std::uint64_t seq;
    Action action;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };

  std::priority_queue<Entry, std::vector<Entry>, Later> heap_;
  Time now_{0};
  std::uint64_t seq_ = 0;
  std::uint64_t processed_ = 0;
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Independent sub-seed for a named stream of a master seed.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  return mix_seed(mix_seed(master) ^ mix_seed(stream + 0x632BE59BD9B4E019ull));
}

}  // namespace ncrel::sim
