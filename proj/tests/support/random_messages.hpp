#pragma once

#include <random>

#include "v2xlab/codec.hpp"

namespace v2xlab::testing {

// Uniformly drawn messages that satisfy every codec invariant.
class MessageGen {
 public:
  explicit MessageGen(std::uint64_t seed) : rng_(seed) {}

  template <class T>
  T uni(T lo, T hi) {
    if constexpr (std::is_integral_v<T>) {
      return static_cast<T>(std::uniform_int_distribution<std::int64_t>(lo, hi)(rng_));
    } else {
      return std::uniform_real_distribution<T>(lo, hi)(rng_);
    }
  }

  codec::CamPayload cam() {
    codec::CamPayload c;
    c.generation_delta_time = uni<std::uint16_t>(0, 65535);
    c.latitude = uni<std::int32_t>(-900'000'000, 900'000'000);
    c.longitude = uni<std::int32_t>(-1'800'000'000, 1'800'000'000);
    c.heading = uni<std::uint16_t>(0, 3601);
    c.speed = uni<std::uint16_t>(0, 16383);
    c.door_status = uni<std::uint8_t>(0, 3);
    c.indicator_status = static_cast<codec::Indicator>(uni<int>(0, 3));
    c.mission_id = uni<std::uint16_t>(0, 65535);
    c.mission_progress = uni<std::uint16_t>(0, 1000);
    return c;
  }

  codec::CpmPayload cpm() {
    codec::CpmPayload c;
    c.reference_time = uni<std::uint64_t>(0, std::numeric_limits<std::int64_t>::max());
    c.latitude = uni<std::int32_t>(-900'000'000, 900'000'000);
    c.longitude = uni<std::int32_t>(-1'800'000'000, 1'800'000'000);
    const int n = uni<int>(0, 20) == 0 ? uni<int>(0, 128) : uni<int>(0, 8);
    for (int i = 0; i < n; ++i) {
      codec::PerceivedObject o;
      o.object_id = uni<std::uint16_t>(0, 65535);
      o.dx = uni<std::int16_t>(-32768, 32767);
      o.dy = uni<std::int16_t>(-32768, 32767);
      o.vx = uni<std::int16_t>(-32768, 32767);
      o.vy = uni<std::int16_t>(-32768, 32767);
      o.footprint_radius = uni<std::uint16_t>(0, 65535);
      o.classification = static_cast<codec::ObjectClass>(uni<int>(0, 2));
      o.confidence = uni<std::uint8_t>(0, 100);
      c.objects.push_back(o);
    }
    return c;
  }

  codec::SpatemPayload spatem() {
    codec::SpatemPayload s;
    s.intersection_id = uni<std::uint16_t>(0, 65535);
    s.revision = uni<std::uint8_t>(0, 255);
    const int n = uni<int>(0, 6);
    const std::uint8_t states[] = {3, 6, 8};
    for (int i = 0; i < n; ++i) {
      codec::MovementState m;
      m.signal_group_id = static_cast<std::uint8_t>(i * 7 + uni<int>(0, 6));
      m.event_state = static_cast<codec::EventState>(states[uni<int>(0, 2)]);
      m.time_to_change = uni<std::uint16_t>(0, 36001);
      s.movements.push_back(m);
    }
    return s;
  }

  codec::MapemPayload mapem() {
    codec::MapemPayload m;
    m.intersection_id = uni<std::uint16_t>(0, 65535);
    m.latitude = uni<std::int32_t>(-900'000'000, 900'000'000);
    m.longitude = uni<std::int32_t>(-1'800'000'000, 1'800'000'000);
    const int lanes = uni<int>(0, 4);
    for (int i = 0; i < lanes; ++i) {
      codec::MapLane l;
      l.lane_id = static_cast<std::uint8_t>(i * 11 + uni<int>(0, 10));
      l.lane_type = uni<int>(0, 1) ? codec::LaneType::Crosswalk : codec::LaneType::Vehicle;
      l.signal_group_id = uni<std::uint8_t>(0, 255);
      const int nodes = uni<int>(2, 12);
      for (int k = 0; k < nodes; ++k) l.nodes.push_back({uni<std::int16_t>(-32768, 32767), uni<std::int16_t>(-32768, 32767)});
      m.lanes.push_back(l);
    }
    return m;
  }

  codec::V2xMessage message(int type) {
    const auto station = uni<std::uint32_t>(0, 0xFFFFFFFFu);
    switch (type % 4) {
      case 0: return codec::make_message(station, cam());
      case 1: return codec::make_message(station, cpm());
      case 2: return codec::make_message(station, spatem());
      default: return codec::make_message(station, mapem());
    }
  }

  std::vector<std::uint8_t> bytes(std::size_t max_len) {
    std::vector<std::uint8_t> b(uni<std::size_t>(0, max_len));
    for (auto& x : b) x = uni<std::uint8_t>(0, 255);
    return b;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace v2xlab::testing
