#include <random>
#include <tuple>

#include "doctest.h"
#include "v2xlab/crossing.hpp"

using namespace v2xlab;
using namespace v2xlab::crossing;

namespace {

constexpr SimTime kTick = 100'000'000;

LaneGeometry straight_lane() {
  return LaneGeometry::make(geom::Polyline({{0, 0}, {100, 0}}), {{48, -3}, {52, -3}, {52, 3}, {48, 3}});
}

ShuttleObservation with_eta(double eta) {
  ShuttleObservation o;
  o.eta = eta;
  o.zone_distance = eta * 2.0;
  return o;
}

ShuttleObservation passed(double distance) {
  ShuttleObservation o;
  o.zone_distance = distance;
  return o;
}

ShuttleObservation inside() {
  ShuttleObservation o;
  o.eta = 0.0;
  o.inside = true;
  return o;
}

const codec::MovementState& group(const codec::SpatemPayload& p, std::uint8_t g) {
  for (const auto& m : p.movements) {
    if (m.signal_group_id == g) return m;
  }
  throw std::runtime_error("missing group");
}

}  // namespace

TEST_SUITE("crossing") {
  TEST_CASE("eta from remaining arc length") {
    const auto lane = straight_lane();
    CHECK(lane.s_enter == doctest::Approx(48).epsilon(1e-3));
    CHECK(lane.s_exit == doctest::Approx(52).epsilon(1e-3));
    const auto o = observe({18, 0}, 0.0, 2.0, lane);
    REQUIRE(o.eta);
    CHECK(*o.eta == doctest::Approx(15.0).epsilon(1e-3));
    CHECK(*observe({50, 0.5}, 0.0, 2.0, lane).eta == 0.0);
    CHECK(observe({50, 0.5}, 0.0, 2.0, lane).inside);
    CHECK_FALSE(observe({53, 0}, 0.0, 2.0, lane).eta);
    CHECK_FALSE(observe({18, 0}, std::numbers::pi, 2.0, lane).eta);
    CHECK(*observe({18, 0}, 0.0, 0.0, lane).eta == doctest::Approx(30.0 / 0.5).epsilon(1e-3));
    const auto off = observe({18, 9}, 0.0, 2.0, lane);
    CHECK(off.off_route);
    CHECK_FALSE(off.eta);
  }

  TEST_CASE("eta from a cam") {
    const geo::GeoAnchor anchor;
    const auto lane = straight_lane();
    codec::CamPayload cam;
    std::tie(cam.latitude, cam.longitude) = anchor.to_wgs84_e7({18, 0});
    cam.heading = geo::enu_heading_to_cam(0.0);
    cam.speed = 200;
    const auto eta = estimate_eta(cam, lane, anchor);
    REQUIRE(eta);
    CHECK(*eta == doctest::Approx(15.0).epsilon(0.01));
    cam.heading = codec::kHeadingUnavailable;
    CHECK_FALSE(estimate_eta(cam, lane, anchor));
  }

  TEST_CASE("lane must pass through the zone") {
    CHECK_THROWS_AS(LaneGeometry::make(geom::Polyline({{0, 10}, {100, 10}}), {{48, -3}, {52, -3}, {52, 3}, {48, 3}}),
                    std::invalid_argument);
  }

  TEST_CASE("no shuttle keeps the crosswalk green") {
    CrossingState s;
    for (int i = 0; i < 10000; ++i) {
      auto r = step(s, i * kTick, std::nullopt);
      CHECK_FALSE(r.change);
      s = r.state;
    }
    CHECK(s.phase == Phase::PedGreen);
    const auto sp = emit_spatem(s, 0, 1);
    CHECK(group(sp, 2).event_state == codec::EventState::ProtectedMovementAllowed);
    CHECK(group(sp, 2).time_to_change == codec::kTimeToChangeUnknown);
    CHECK(group(sp, 1).event_state == codec::EventState::StopAndRemain);
  }

  TEST_CASE("shuttle priority trace") {
    CrossingState s;
    SimTime t = 0;
    int clearance_tick = -1;
    int red_tick = -1;
    // Shuttle approaching at constant speed: eta 13.0, 12.9, ...
    for (int i = 0; i <= 130; ++i, t += kTick) {
      const double eta = 13.0 - 0.1 * i;
      auto r = step(s, t, with_eta(std::max(0.0, eta)));
      if (r.change && r.change->to == Phase::PedClearance) clearance_tick = i;
      if (r.change && r.change->to == Phase::PedRed) red_tick = i;
      s = r.state;
    }
    CHECK(clearance_tick == 10);
    CHECK(red_tick == 50);
    CHECK(s.phase == Phase::PedRed);
    // Inside the zone, then leaving it: green only past the margin.
    for (int i = 0; i < 20; ++i, t += kTick) s = step(s, t, inside()).state;
    CHECK(s.phase == Phase::PedRed);
    s = step(s, t, passed(1.5)).state;
    CHECK(s.phase == Phase::PedRed);
    t += kTick;
    auto r = step(s, t, passed(2.5));
    REQUIRE(r.change);
    CHECK(r.change->from == Phase::PedRed);
    CHECK(r.state.phase == Phase::PedGreen);
  }

  TEST_CASE("pedestrian priority holds green for the window") {
    CrossingState s;
    s.mode = Mode::PedestrianPriority;
    SimTime t = 0;
    std::optional<SimTime> detected;
    std::optional<SimTime> cleared;
    for (int i = 0; i < 400 && !cleared; ++i, t += kTick) {
      // Approaches, then waits short of the stop line.
      const double eta = std::max(1.0, 14.0 - 0.1 * i);
      auto r = step(s, t, with_eta(eta));
      if (!detected && eta <= 12.0) detected = t;
      if (r.change && r.change->to == Phase::PedClearance) cleared = t;
      s = r.state;
    }
    REQUIRE(detected);
    REQUIRE(cleared);
    CHECK(*cleared - *detected >= from_seconds(15.0));
    CHECK(*cleared - *detected < from_seconds(15.0) + kTick);
  }

  TEST_CASE("pedestrian priority green countdown follows the hold window") {
    CrossingState s;
    s.mode = Mode::PedestrianPriority;
    s = step(s, 0, with_eta(10.0)).state;
    CHECK(emit_spatem(s, 0, 1).movements[1].time_to_change == 150);
    CHECK(emit_spatem(s, from_seconds(2.05), 1).movements[1].time_to_change == 130);
  }

  TEST_CASE("spatem event states and countdown") {
    CrossingState s;
    s.phase = Phase::PedClearance;
    s.phase_entered_at = from_seconds(10);
    s.scheduled_change_at = from_seconds(14);
    const auto sp = emit_spatem(s, from_seconds(11), 7);
    CHECK(sp.intersection_id == 7);
    CHECK(group(sp, 2).event_state == codec::EventState::ProtectedClearance);
    CHECK(group(sp, 2).time_to_change == 30);
    CHECK(group(sp, 1).event_state == codec::EventState::StopAndRemain);
    CHECK(emit_spatem(s, from_seconds(11.01), 7).movements[1].time_to_change == 30);
    CHECK(emit_spatem(s, from_seconds(11.11), 7).movements[1].time_to_change == 29);

    CrossingState red;
    red.phase = Phase::PedRed;
    const auto sr = emit_spatem(red, 0, 1);
    CHECK(group(sr, 1).event_state == codec::EventState::ProtectedMovementAllowed);
    CHECK(group(sr, 2).event_state == codec::EventState::StopAndRemain);
    CHECK(group(sr, 2).time_to_change == codec::kTimeToChangeUnknown);
  }

  TEST_CASE("automaton properties under random observations") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0, 1);
    for (Mode mode : {Mode::ShuttlePriority, Mode::PedestrianPriority}) {
      CrossingState s;
      s.mode = mode;
      std::optional<std::uint16_t> last_ttc;
      for (int i = 0; i < 50000; ++i) {
        const SimTime t = i * kTick;
        std::optional<ShuttleObservation> obs;
        const double r = u(rng);
        if (r < 0.3) obs = with_eta(40 * u(rng));
        else if (r < 0.4) obs = inside();
        else if (r < 0.6) obs = passed(5 * u(rng));
        auto res = step(s, t, obs);
        if (res.change) {
          CHECK_FALSE((res.change->from == Phase::PedGreen && res.change->to == Phase::PedRed));
          if (res.change->from == Phase::PedClearance) CHECK(t - s.phase_entered_at == from_seconds(4.0));
          last_ttc.reset();
        }
        s = res.state;
        if (s.scheduled_change_at) {
          CHECK(*s.scheduled_change_at >= s.phase_entered_at);
          const auto ttc = emit_spatem(s, t, 1).movements[1].time_to_change;
          if (last_ttc) CHECK(ttc <= *last_ttc);
          last_ttc = ttc;
        } else {
          last_ttc.reset();
        }
      }
    }
  }

  TEST_CASE("red time fraction") {
    const SimTime horizon = from_seconds(19 * 3600 + 56 * 60);
    const std::vector<PhaseLogEntry> log{{0, Phase::PedGreen},
                                         {from_seconds(1000), Phase::PedClearance},
                                         {from_seconds(1004), Phase::PedRed},
                                         {from_seconds(1000 + 63 * 60 + 33), Phase::PedGreen}};
    const auto r = red_time_fraction(log, 0, horizon);
    CHECK(r.red_seconds == doctest::Approx(3813.0));
    CHECK(100.0 * r.fraction_immediate_cross == doctest::Approx(94.69).epsilon(1e-4));
    const std::vector<PhaseLogEntry> green{{0, Phase::PedGreen}};
    CHECK(red_time_fraction(green, 0, horizon).fraction_immediate_cross == 1.0);
    const std::vector<PhaseLogEntry> half{{0, Phase::PedRed}, {from_seconds(50), Phase::PedGreen}};
    CHECK(red_time_fraction(half, 0, from_seconds(100)).fraction_immediate_cross == doctest::Approx(0.5));
    CHECK_THROWS_AS(red_time_fraction({}, 0, horizon), EmptyLog);
  }

  TEST_CASE("mapem round trip through decode") {
    const geo::GeoAnchor anchor;
    const auto lane = straight_lane();
    const auto m = build_mapem(lane, anchor, {50, 0}, 1);
    REQUIRE(m.lanes.size() == 2);
    CHECK(m.lanes[1].lane_type == codec::LaneType::Crosswalk);
    CHECK(m.lanes[1].signal_group_id == kCrosswalkSignalGroup);
    CHECK(m.lanes[1].nodes.size() == 4);
    const auto v = decode_mapem(m, anchor);
    REQUIRE(v);
    REQUIRE(v->conflict_zone.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(v->conflict_zone[i].x == doctest::Approx(lane.conflict_zone[i].x).epsilon(1e-3));
      CHECK(v->conflict_zone[i].y == doctest::Approx(lane.conflict_zone[i].y).epsilon(1e-2));
    }
    CHECK(v->vehicle_lane.length() == doctest::Approx(100).epsilon(1e-3));
  }

  TEST_CASE("controller logs every change") {
    const geo::GeoAnchor anchor;
    CrossingController c(straight_lane(), anchor, {}, 1);
    codec::CamPayload cam;
    std::tie(cam.latitude, cam.longitude) = anchor.to_wgs84_e7({30, 0});
    cam.heading = geo::enu_heading_to_cam(0.0);
    cam.speed = 200;
    c.on_cam(cam);
    for (int i = 0; i < 60; ++i) c.step(i * kTick);
    const auto& log = c.phase_log();
    REQUIRE(log.size() == 3);
    CHECK(log[1].phase == Phase::PedClearance);
    CHECK(log[1].at == 0);
    CHECK(log[2].phase == Phase::PedRed);
    CHECK(log[2].at == from_seconds(4));
    c.set_mode(Mode::PedestrianPriority);
    CHECK(c.state().mode == Mode::PedestrianPriority);
  }
}
