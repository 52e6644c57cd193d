#include <gtest/gtest.h>

#include <cmath>

#include "ncrel/channel.hpp"

using namespace ncrel;
using namespace ncrel::channel;
using namespace std::chrono_literals;

namespace {

ErasureChannelModel model(double p) {
  ErasureChannelModel m;
  m.loss = Bernoulli{p};
  return m;
}

std::uint64_t count_erasures(LossModel loss, int n, std::uint64_t seed) {
  sim::EventQueue ev;
  Link link(1e9, 0ms, std::move(loss), seed);
  std::uint64_t lost = 0;
  for (int i = 0; i < n; ++i)
    if (!link.send(100, ev.now())) ++lost;
  return lost;
}

}  // namespace

TEST(EventQueueTest, OrdersByTimeThenInsertion) {
  sim::EventQueue ev;
  std::vector<int> order;
  ev.at(2ms, [&] { order.push_back(3); });
  ev.at(1ms, [&] { order.push_back(1); });
  ev.at(1ms, [&] { order.push_back(2); });
  ev.run();
  EXPECT_EQ(order, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(ev.now(), sim::Time(2ms));
  EXPECT_THROW(ev.at(1ms, [] {}), std::logic_error);
}

TEST(EventQueueTest, RunUntilStopsAtHorizon) {
  sim::EventQueue ev;
  int fired = 0;
  ev.at(1s, [&] { ++fired; });
  ev.at(3s, [&] { ++fired; });
  ev.run_until(2s);
  EXPECT_EQ(fired, 1);
  EXPECT_EQ(ev.now(), sim::Time(2s));
}

TEST(Seeds, DerivedStreamsDiffer) {
  EXPECT_NE(sim::derive_seed(1, 1), sim::derive_seed(1, 2));
  EXPECT_NE(sim::derive_seed(1, 1), sim::derive_seed(2, 1));
  EXPECT_EQ(sim::derive_seed(5, 3), sim::derive_seed(5, 3));
}

TEST(LinkTest, ExtremeLossRates) {
  EXPECT_EQ(count_erasures(Bernoulli{0.0}, 1000, 1), 0u);
  EXPECT_EQ(count_erasures(Bernoulli{1.0}, 1000, 1), 1000u);
}

TEST(LinkTest, BernoulliRate) {
  const auto lost = count_erasures(Bernoulli{0.2}, 10000, 3);
  EXPECT_NEAR(static_cast<double>(lost), 2000.0, 120.0);
}

TEST(LinkTest, GilbertElliottMatchesStationaryMean) {
  GilbertElliott g{0.01, 0.6, 0.05, 0.2};
  const double want = mean_loss(g);
  EXPECT_NEAR(want, 0.8 * 0.01 + 0.2 * 0.6, 1e-12);
  const auto lost = count_erasures(g, 200000, 4);
  EXPECT_NEAR(static_cast<double>(lost) / 200000.0, want, 0.01);
}

TEST(LinkTest, FifoSerializationAndDelay) {
  Link link(8e6, 10ms, Bernoulli{0.0}, 1);
  // 1000 bytes at 8 Mbps take 1 ms.
  auto a = link.send(1000, 0ms);
  auto b = link.send(1000, 0ms);
  auto c = link.send(1000, 5ms);
  ASSERT_TRUE(a && b && c);
  EXPECT_EQ(*a, sim::Time(11ms));
  EXPECT_EQ(*b, sim::Time(12ms));
  EXPECT_EQ(*c, sim::Time(16ms));
  EXPECT_EQ(link.counters().sent, 3u);
  EXPECT_EQ(link.counters().bytes, 3000u);
}

TEST(LinkTest, ErasedPacketsStillOccupyTheLink) {
  Link link(8e6, 0ms, Bernoulli{1.0}, 1);
  EXPECT_FALSE(link.send(1000, 0ms).has_value());
  EXPECT_EQ(link.busy_until(), sim::Time(1ms));
}

TEST(LinkTest, FlowsHaveIndependentStreams) {
  // Interleaving flow 1 traffic must not change flow 0's erasure pattern.
  Link a(1e9, 0ms, Bernoulli{0.3}, 9);
  Link b(1e9, 0ms, Bernoulli{0.3}, 9);
  for (int i = 0; i < 500; ++i) {
    const bool x = a.send(10, 0ms, 0).has_value();
    b.send(10, 0ms, 1);
    const bool y = b.send(10, 0ms, 0).has_value();
    ASSERT_EQ(x, y) << i;
  }
}

TEST(ModelTest, Validation) {
  EXPECT_THROW(model(1.5).validate(), std::invalid_argument);
  auto m = model(0.1);
  m.ack_loss_prob = -0.1;
  EXPECT_THROW(m.validate(), std::invalid_argument);
  m = model(0.1);
  m.rate_bps = 0;
  EXPECT_THROW(m.validate(), std::invalid_argument);
  EXPECT_NO_THROW(model(0.1).validate());
}

TEST(HarqTest, LossFree) {
  HarqConfig cfg;
  auto r = harq_transfer(1000, 1400, 1ms, cfg, model(0.0), 1);
  EXPECT_EQ(r.delivered, 1000u);
  EXPECT_EQ(r.harq.attempts, 1000u);
}

TEST(HarqTest, NoRetransmissionsEqualsRaw) {
  HarqConfig cfg;
  cfg.max_retx = 0;
  const auto h = harq_transfer(5000, 1400, 1ms, cfg, model(0.2), 42);
  const auto r = raw_transfer(5000, 1400, 1ms, model(0.2), 42);
  EXPECT_EQ(h.delivered_mask, r.delivered_mask);
}

TEST(HarqTest, ChaseCombiningHidesModerateLoss) {
  HarqConfig cfg;
  // Residual loss per unit is prod_k p^(k+1) = 0.3^15, effectively zero.
  const auto r = harq_transfer(5000, 1400, 1ms, cfg, model(0.3), 2);
  EXPECT_EQ(r.delivered, 5000u);
  EXPECT_GT(r.harq.attempts, 5000u);
}

TEST(HarqTest, CombiningModelIsPluggable) {
  HarqConfig cfg;
  cfg.combining = [](double p, unsigned) { return p; };  // no combining gain
  cfg.max_retx = 1;
  const auto r = harq_transfer(20000, 100, 100us, cfg, model(0.5), 3);
  EXPECT_NEAR(r.delivery_ratio(), 0.75, 0.015);
}

TEST(HarqTest, InOrderReleasePreservesSubmissionOrder) {
  HarqConfig cfg;
  const auto r = harq_transfer(2000, 1400, 100us, cfg, model(0.4), 5);
  EXPECT_TRUE(std::is_sorted(r.delivery_order.begin(), r.delivery_order.end()));
  cfg.in_order = false;
  const auto u = harq_transfer(2000, 1400, 100us, cfg, model(0.4), 5);
  EXPECT_FALSE(std::is_sorted(u.delivery_order.begin(), u.delivery_order.end()));
}

TEST(HarqTest, RetransmissionDelays) {
  HarqConfig cfg;
  EXPECT_EQ(cfg.downlink_retx_delay(), sim::Time(10ms));
  EXPECT_EQ(cfg.uplink_retx_delay(), sim::Time(20ms));
}

TEST(InOrderReleaseTest, HoldsUntilGapFills) {
  std::vector<std::uint64_t> got;
  InOrderRelease r([&](std::uint64_t s, bool) { got.push_back(s); });
  r.resolve(1, true);
  r.resolve(2, false);
  EXPECT_TRUE(got.empty());
  r.resolve(0, true);
  EXPECT_EQ(got, (std::vector<std::uint64_t>{0, 1, 2}));
}

TEST(ArqTest, LossFreeNeedsNoRetransmission) {
  ArqConfig cfg;
  const auto r = arq_transfer(2000, 256, 1ms, cfg, model(0.0), 1);
  EXPECT_EQ(r.delivered, 2000u);
  EXPECT_EQ(r.arq.retransmissions, 0u);
  EXPECT_EQ(r.arq.acked, 2000u);
}

TEST(ArqTest, DeadLinkDeliversNothing) {
  ArqConfig cfg;
  const auto r = arq_transfer(200, 256, 1ms, cfg, model(1.0), 1);
  EXPECT_EQ(r.delivered, 0u);
  EXPECT_EQ(r.arq.transmissions, 200u * 5u);
  EXPECT_EQ(r.arq.discarded, 200u);
}

TEST(ArqTest, ResidualDeliveryMatchesLifetimeBound) {
  ArqConfig cfg;
  const auto r = arq_transfer(10000, 256, 1ms, cfg, model(0.5), 7);
  const double want = 1.0 - std::pow(0.5, 5);
  EXPECT_NEAR(r.delivery_ratio(), want, 0.01 * want);
}

TEST(ArqTest, InOrderDelivery) {
  ArqConfig cfg;
  const auto r = arq_transfer(3000, 256, 1ms, cfg, model(0.3), 8);
  EXPECT_TRUE(std::is_sorted(r.delivery_order.begin(), r.delivery_order.end()));
  EXPECT_GT(r.arq.duplicates, 0u);
}

TEST(ArqTest, MultiBlockSduLostIfAnyBlockIsLost) {
  ArqConfig cfg;
  // Four blocks per SDU, each delivered with probability 31/32.
  const auto r = arq_transfer(4000, 1024, 2ms, cfg, model(0.5), 9);
  const double want = std::pow(1.0 - std::pow(0.5, 5), 4);
  EXPECT_NEAR(r.delivery_ratio(), want, 0.02);
}

TEST(ArqTest, DeterministicForSeed) {
  ArqConfig cfg;
  const auto a = arq_transfer(1000, 256, 1ms, cfg, model(0.3), 11);
  const auto b = arq_transfer(1000, 256, 1ms, cfg, model(0.3), 11);
  EXPECT_EQ(a.delivered_mask, b.delivered_mask);
  EXPECT_EQ(a.finished, b.finished);
  EXPECT_EQ(a.arq.transmissions, b.arq.transmissions);
}

TEST(ArqTest, ConfigValidation) {
  ArqConfig cfg;
  cfg.retry_timeout = 0ms;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = ArqConfig{};
  cfg.window_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}
