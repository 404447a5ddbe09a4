#include <cmath>

#include "doctest.h"
#include "v2xlab/netbus.hpp"

using namespace v2xlab;
using namespace v2xlab::net;

namespace {

codec::V2xMessage cam(std::uint32_t station, std::uint16_t seq) {
  codec::CamPayload c;
  c.generation_delta_time = seq;
  return codec::make_message(station, c);
}

NetBus three_stations(LossModel m) {
  NetBus bus(std::move(m));
  bus.add_station(100, StationRole::Shuttle, {0, 0});
  bus.add_station(200, StationRole::RsuCrossing, {40, 5});
  bus.add_station(300, StationRole::RsuBusStop0, {80, -5});
  return bus;
}

}  // namespace

TEST_SUITE("netbus") {
  TEST_CASE("lossless bus delivers every message exactly once") {
    auto bus = three_stations({});
    for (int i = 0; i < 100; ++i) bus.broadcast(100, cam(100, static_cast<std::uint16_t>(i)), from_millis(100 * i));
    const auto rx2 = bus.poll(200, from_seconds(20));
    const auto rx3 = bus.poll(300, from_seconds(20));
    CHECK(rx2.size() == 100);
    CHECK(rx3.size() == 100);
    CHECK(bus.poll(100, from_seconds(20)).empty());
    for (std::size_t i = 0; i < rx2.size(); ++i) CHECK(rx2[i].sequence == i);
  }

  TEST_CASE("total loss leaves rx logs empty") {
    LossModel m;
    m.base_loss = 1.0;
    auto bus = three_stations(m);
    for (int i = 0; i < 50; ++i) bus.broadcast(100, cam(100, 0), from_millis(100 * i));
    CHECK(bus.poll(200, from_seconds(20)).empty());
    CHECK(bus.station(200).rx_log.empty());
    CHECK(bus.station(100).tx_log.size() == 50);
  }

  TEST_CASE("messages are not visible before their delivery time") {
    auto bus = three_stations({});
    bus.broadcast(100, cam(100, 0), 0);
    CHECK(bus.poll(200, 0).empty());
    CHECK(bus.poll(200, from_millis(2)).empty());
    const auto rx = bus.poll(200, from_millis(100));
    REQUIRE(rx.size() == 1);
    CHECK(rx[0].time >= from_millis(3));
    CHECK(rx[0].time <= from_millis(7));
  }

  TEST_CASE("segment zone loss matches its binomial interval") {
    LossModel m;
    m.zones.push_back({"glass", {{20, -10}, {22, -10}, {22, 10}, {20, 10}}, 0.2, ZoneMode::SegmentCrosses});
    NetBus bus(m, false);
    bus.add_station(100, StationRole::Shuttle, {0, 0});
    bus.add_station(200, StationRole::RsuCrossing, {40, 0});
    const int n = 5000;
    for (int i = 0; i < n; ++i) bus.broadcast(100, cam(100, 0), from_millis(100 * i));
    const double loss = 1.0 - static_cast<double>(bus.poll(200, from_seconds(1e4)).size()) / n;
    CHECK(std::abs(loss - 0.2) <= 0.015);
  }

  TEST_CASE("independent zones compose") {
    LossModel m;
    m.zones.push_back({"a", {{10, -10}, {12, -10}, {12, 10}, {10, 10}}, 0.2, ZoneMode::SegmentCrosses});
    m.zones.push_back({"b", {{30, -10}, {32, -10}, {32, 10}, {30, 10}}, 0.3, ZoneMode::SegmentCrosses});
    CHECK(m.effective_loss({0, 0}, {40, 0}) == doctest::Approx(1 - 0.8 * 0.7));
    NetBus bus(m, false);
    bus.add_station(100, StationRole::Shuttle, {0, 0});
    bus.add_station(200, StationRole::RsuCrossing, {40, 0});
    const int n = 20000;
    for (int i = 0; i < n; ++i) bus.broadcast(100, cam(100, 0), from_millis(100 * i));
    const double p = 1 - 0.8 * 0.7;
    const double loss = 1.0 - static_cast<double>(bus.poll(200, from_seconds(1e5)).size()) / n;
    CHECK(std::abs(loss - p) <= 3 * std::sqrt(p * (1 - p) / n));
  }

  TEST_CASE("zone modes") {
    const LossZone z{"z", {{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}, 0.5, ZoneMode::SenderIn};
    LossModel m;
    CHECK(m.zone_applies(z, {0, 0}, {10, 0}));
    CHECK_FALSE(m.zone_applies(z, {10, 0}, {0, 0}));
    auto r = z;
    r.mode = ZoneMode::ReceiverIn;
    CHECK(m.zone_applies(r, {10, 0}, {0, 0}));
    CHECK_FALSE(m.zone_applies(r, {0, 0}, {10, 0}));
  }

  TEST_CASE("identical seeds give identical logs") {
    LossModel m;
    m.base_loss = 0.3;
    m.rng_seed = 99;
    auto a = three_stations(m);
    auto b = three_stations(m);
    for (int i = 0; i < 300; ++i) {
      const auto s = static_cast<std::uint32_t>(i % 2 ? 100 : 300);
      a.broadcast(s, cam(s, static_cast<std::uint16_t>(i)), from_millis(10 * i));
      b.broadcast(s, cam(s, static_cast<std::uint16_t>(i)), from_millis(10 * i));
      a.poll(200, from_millis(10 * i));
      b.poll(200, from_millis(10 * i));
    }
    for (auto id : {100u, 200u, 300u}) CHECK(a.log_digest(id) == b.log_digest(id));
    m.rng_seed = 100;
    auto c = three_stations(m);
    for (int i = 0; i < 300; ++i) {
      const auto s = static_cast<std::uint32_t>(i % 2 ? 100 : 300);
      c.broadcast(s, cam(s, static_cast<std::uint16_t>(i)), from_millis(10 * i));
      c.poll(200, from_millis(10 * i));
    }
    CHECK(a.log_digest(200) != c.log_digest(200));
  }

  TEST_CASE("per-sender order is preserved under jitter") {
    LossModel m;
    m.latency_jitter_ms = 5.0;
    m.latency_mean_ms = 5.0;
    auto bus = three_stations(m);
    for (int i = 0; i < 500; ++i) bus.broadcast(100, cam(100, 0), from_millis(i));
    const auto rx = bus.poll(200, from_seconds(10));
    REQUIRE(rx.size() == 500);
    for (std::size_t i = 1; i < rx.size(); ++i) {
      CHECK(rx[i].sequence > rx[i - 1].sequence);
      CHECK(rx[i].time >= rx[i - 1].time);
      CHECK(rx[i].time >= rx[i].sent_at);
    }
  }

  TEST_CASE("invalid loss models are rejected") {
    LossModel m;
    m.base_loss = 1.2;
    CHECK_THROWS(m.validate());
    LossModel z;
    z.zones.push_back({"bow", {{0, 0}, {1, 1}, {1, 0}, {0, 1}}, 0.1, ZoneMode::SegmentCrosses});
    CHECK_THROWS(z.validate());
  }

  TEST_CASE("invalid messages are not broadcast") {
    auto bus = three_stations({});
    codec::CamPayload c;
    c.speed = 20000;
    CHECK_THROWS_AS(bus.broadcast(100, codec::make_message(100, c), 0), codec::InvariantViolation);
    CHECK(bus.tx_count(100) == 0);
  }
}
