#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <string>
#include <thread>

#include "doctest.h"
#include "v2xlab/telemetry.hpp"

using namespace v2xlab;
using namespace v2xlab::telemetry;
using nlohmann::json;

namespace {

constexpr SimTime kTick = 100'000'000;

const geo::GeoAnchor kAnchor{48.1372, 11.5755};

sim::BroadcastRecord record(std::uint32_t sender, codec::Payload p) {
  return {sender, 0, codec::make_message(sender, std::move(p))};
}

codec::CamPayload cam_at(geom::Vec2 enu) {
  codec::CamPayload c;
  std::tie(c.latitude, c.longitude) = kAnchor.to_wgs84_e7(enu);
  c.heading = 900;
  c.speed = 250;
  c.mission_id = 4;
  c.mission_progress = 321;
  return c;
}

codec::SpatemPayload spatem(codec::EventState crosswalk, std::uint16_t ttc) {
  codec::SpatemPayload s;
  s.intersection_id = 1;
  s.movements.push_back({crossing::kShuttleSignalGroup, codec::EventState::ProtectedMovementAllowed, 100});
  s.movements.push_back({crossing::kCrosswalkSignalGroup, crosswalk, ttc});
  return s;
}

codec::CpmPayload cpm_with(int pedestrians, int others = 0) {
  codec::CpmPayload c;
  std::tie(c.latitude, c.longitude) = kAnchor.to_wgs84_e7({10.0, 5.0});
  for (int i = 0; i < pedestrians + others; ++i) {
    codec::PerceivedObject o;
    o.object_id = static_cast<std::uint16_t>(i + 1);
    o.dx = static_cast<std::int16_t>(100 * i);
    o.dy = -50;
    o.footprint_radius = 30;
    o.classification = i < pedestrians ? codec::ObjectClass::Pedestrian : codec::ObjectClass::Vehicle;
    c.objects.push_back(o);
  }
  return c;
}

// One tick in which every feed reports, except the bus stops listed as silent.
sim::TickOutput tick_output(std::uint64_t tick, bool stop0 = true, bool stop1 = true, int peds0 = 1) {
  sim::TickOutput o;
  o.tick = tick;
  o.t = static_cast<SimTime>(tick) * kTick;
  o.broadcasts.push_back(record(100, cam_at({20.0, 3.0})));
  o.broadcasts.push_back(record(200, spatem(codec::EventState::ProtectedMovementAllowed, 155)));
  if (stop0) o.broadcasts.push_back(record(300, cpm_with(peds0, 1)));
  if (stop1) o.broadcasts.push_back(record(301, cpm_with(0)));
  return o;
}

sim::ScenarioConfig manual_scenario() {
  auto cfg = sim::parse_scenario("name: telemetry\nseed: 9\ntrips: {count: 1}\n");
  cfg.auto_dispatch = false;
  return cfg;
}

Command command(const std::string& line) { return parse_command(json::parse(line)); }

bool read_line(int fd, std::string& buf, std::string& line, int timeout_ms) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (true) {
    if (const auto nl = buf.find('\n'); nl != std::string::npos) {
      line = buf.substr(0, nl);
      buf.erase(0, nl + 1);
      return true;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return false;
    pollfd p{fd, POLLIN, 0};
    if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) continue;
    char tmp[4096];
    const auto n = ::recv(fd, tmp, sizeof tmp, 0);
    if (n <= 0) return false;
    buf.append(tmp, static_cast<std::size_t>(n));
  }
}

}  // namespace

TEST_SUITE("telemetry") {
  TEST_CASE("all feeds live gives no stale flags") {
    Aggregator agg(kAnchor);
    for (std::uint64_t t = 0; t < 30; ++t) agg.ingest(tick_output(t));
    const auto s = agg.snapshot();
    CHECK(s.stale_count() == 0);
    REQUIRE(s.shuttle.has_value());
    CHECK(s.shuttle->position.x == doctest::Approx(20.0).epsilon(1e-3));
    CHECK(s.shuttle->position.y == doctest::Approx(3.0).epsilon(1e-3));
    CHECK(s.shuttle->speed == doctest::Approx(2.5));
    CHECK(s.shuttle->heading == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(s.shuttle->mission_id == 4);
    CHECK(s.shuttle->progress == 321);
    REQUIRE(s.crossing.has_value());
    CHECK(s.crossing->phase == crossing::Phase::PedGreen);
    REQUIRE(s.crossing->countdown.has_value());
    CHECK(*s.crossing->countdown == doctest::Approx(15.5));
    REQUIRE(s.bus_stops.size() == 2);
    CHECK(s.bus_stops[0].station_id == 300);
    CHECK(s.bus_stops[1].station_id == 301);
  }

  TEST_CASE("a silent bus stop is flagged stale on its own") {
    Aggregator agg(kAnchor);
    for (std::uint64_t t = 0; t < 10; ++t) agg.ingest(tick_output(t));
    for (std::uint64_t t = 10; t <= 30; ++t) agg.ingest(tick_output(t, true, false));
    const auto s = agg.snapshot();
    CHECK_FALSE(s.bus_stops[0].stale);
    CHECK(s.bus_stops[1].stale);
    CHECK_FALSE(s.shuttle_stale);
    CHECK_FALSE(s.crossing_stale);
    CHECK(s.stale_count() == 1);
    const auto j = to_json(s);
    CHECK(j["bus_stops"][1]["stale"] == true);
    CHECK(j["bus_stops"][0]["stale"] == false);
    CHECK(j["health"]["301"]["stale"] == true);
    CHECK(j["health"]["100"]["stale"] == false);
  }

  TEST_CASE("staleness needs more than a second of silence") {
    Aggregator agg(kAnchor);
    agg.ingest(tick_output(0));
    for (std::uint64_t t = 1; t <= 10; ++t) agg.ingest(tick_output(t, true, false));
    CHECK_FALSE(agg.snapshot().bus_stops[1].stale);
    agg.ingest(tick_output(11, true, false));
    CHECK(agg.snapshot().bus_stops[1].stale);
    agg.ingest(tick_output(12));
    CHECK_FALSE(agg.snapshot().bus_stops[1].stale);
  }

  TEST_CASE("CPM pedestrians become boxes and the count") {
    Aggregator agg(kAnchor);
    agg.ingest(tick_output(0, true, true, 3));
    const auto s = agg.snapshot();
    REQUIRE(s.bus_stops[0].pedestrian_count.has_value());
    CHECK(*s.bus_stops[0].pedestrian_count == 3);
    REQUIRE(s.bus_stops[0].boxes.size() == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(s.bus_stops[0].boxes[i].position.x == doctest::Approx(10.0 + i).epsilon(1e-3));
      CHECK(s.bus_stops[0].boxes[i].position.y == doctest::Approx(4.5).epsilon(1e-3));
      CHECK(s.bus_stops[0].boxes[i].radius == doctest::Approx(0.3));
    }
    CHECK(*s.bus_stops[1].pedestrian_count == 0);
  }

  TEST_CASE("the direct count channel overrides the CPM count") {
    Aggregator agg(kAnchor);
    auto o = tick_output(0, true, true, 3);
    o.stop_pedestrian_counts = {5, 0};
    agg.ingest(o);
    CHECK(*agg.snapshot().bus_stops[0].pedestrian_count == 5);
    CHECK(agg.snapshot().bus_stops[0].boxes.size() == 3);
  }

  TEST_CASE("crosswalk states map to phases") {
    Aggregator agg(kAnchor);
    auto o = tick_output(0);
    o.broadcasts[1] = record(200, spatem(codec::EventState::ProtectedClearance, 30));
    agg.ingest(o);
    CHECK(agg.snapshot().crossing->phase == crossing::Phase::PedClearance);
    CHECK(*agg.snapshot().crossing->countdown == doctest::Approx(3.0));
    o.broadcasts[1] = record(200, spatem(codec::EventState::StopAndRemain, codec::kTimeToChangeUnknown));
    agg.ingest(o);
    CHECK(agg.snapshot().crossing->phase == crossing::Phase::PedRed);
    CHECK_FALSE(agg.snapshot().crossing->countdown.has_value());
  }

  TEST_CASE("snapshot JSON layout") {
    Aggregator agg(kAnchor);
    CHECK(to_json(agg.snapshot())["shuttle"].is_null());
    agg.ingest(tick_output(3));
    const auto j = to_json(agg.snapshot());
    CHECK(j["v"] == kSchemaVersion);
    CHECK(j["type"] == "snapshot");
    CHECK(j["tick"] == 3);
    CHECK(j["sim_time_ns"] == 3 * kTick);
    for (const char* k : {"x_m", "y_m", "heading_rad", "speed_mps", "soc_percent", "indicator", "door_status",
                          "mission_id", "progress", "driving_status", "paused", "stamp_ns", "stale"}) {
      CHECK_MESSAGE(j["shuttle"].contains(k), k);
    }
    for (const char* k : {"phase", "mode", "countdown_s", "stamp_ns", "stale"}) CHECK_MESSAGE(j["crossing"].contains(k), k);
    CHECK(j["bus_stops"].size() == 2);
    CHECK(j["bus_stops"][0]["boxes"].is_array());
    CHECK(j.at("health").size() == 4);
    CHECK(json::parse(j.dump()) == j);
  }

  TEST_CASE("command parsing") {
    auto c = command(R"({"v":1,"id":7,"command":"set_intersection_mode","mode":"PEDESTRIAN_PRIORITY"})");
    CHECK(c.kind == CommandKind::SetIntersectionMode);
    CHECK(c.target == "crossing");
    CHECK(c.mode == crossing::Mode::PedestrianPriority);
    CHECK(c.id == 7);
    c = command(R"({"command":"dispatch_mission","direction":"outbound","target":100})");
    CHECK(c.kind == CommandKind::DispatchMission);
    CHECK(c.target == "100");
    CHECK(c.direction == shuttle::Direction::Outbound);
    c = command(R"({"command":"pause_shuttle"})");
    CHECK(c.target == "shuttle");
    c = command(R"({"command":"send_external_trajectory","samples":[{"t":0,"x":1,"y":2,"heading":0.5,"speed":1.5}]})");
    REQUIRE(c.samples.size() == 1);
    CHECK(c.samples[0] == shuttle::TrajectorySample{0.0, 1.0, 2.0, 0.5, 1.5});

    for (const char* bad : {R"([1,2])", R"({"v":2,"command":"pause_shuttle"})", R"({"command":"fly"})",
                            R"({"id":1})", R"({"command":"set_intersection_mode"})",
                            R"({"command":"set_intersection_mode","mode":"LOUDEST"})",
                            R"({"command":"dispatch_mission"})", R"({"command":"pause_shuttle","target":[1]})",
                            R"({"command":"send_external_trajectory","samples":[{"t":0}]})"}) {
      CHECK_THROWS_AS_MESSAGE(command(bad), BadCommand, bad);
    }
  }

  TEST_CASE("ack JSON") {
    Ack a;
    a.id = "x";
    a.kind = CommandKind::DispatchMission;
    a.error = "Busy: a trip is in progress";
    a.submitted_tick = 4;
    a.effective_tick = 5;
    const auto j = to_json(a);
    CHECK(j["type"] == "ack");
    CHECK(j["id"] == "x");
    CHECK(j["ok"] == false);
    CHECK(j["error"] == a.error);
    CHECK(j["submitted_tick"] == 4);
    CHECK(j["effective_tick"] == 5);
  }

  TEST_CASE("mode change shows on the next tick") {
    sim::Simulation s(manual_scenario());
    CommandHub hub(s);
    Aggregator agg(s.anchor());
    for (int i = 0; i < 10; ++i) {
      s.step();
      agg.ingest(s.last_output());
    }
    CHECK(agg.snapshot().crossing->mode == crossing::Mode::ShuttlePriority);
    std::optional<Ack> ack;
    hub.submit(command(R"({"id":1,"command":"set_intersection_mode","mode":"PEDESTRIAN_PRIORITY"})"),
               [&](const Ack& a) { ack = a; });
    CHECK(hub.pending() == 1);
    CHECK(s.crossing().state().mode == crossing::Mode::ShuttlePriority);
    s.step();
    agg.ingest(s.last_output());
    REQUIRE(ack.has_value());
    CHECK(ack->ok);
    CHECK(hub.pending() == 0);
    CHECK(agg.snapshot().crossing->mode == crossing::Mode::PedestrianPriority);
    CHECK(to_json(agg.snapshot())["crossing"]["mode"] == "PEDESTRIAN_PRIORITY");
  }

  TEST_CASE("commands are rejected with a kind and reason") {
    sim::Simulation s(manual_scenario());
    CommandHub hub(s);
    std::vector<Ack> acks;
    auto keep = [&](const Ack& a) { acks.push_back(a); };
    hub.submit(command(R"({"command":"dispatch_mission","direction":"outbound"})"), keep);
    s.step();
    REQUIRE(acks.size() == 1);
    CHECK_FALSE(acks[0].ok);
    CHECK(acks[0].error.rfind("Busy", 0) == 0);  // still learning the background

    for (int i = 0; i < 60; ++i) s.step();
    hub.submit(command(R"({"command":"dispatch_mission","direction":"outbound"})"), keep);
    hub.submit(command(R"({"command":"dispatch_mission","direction":"return"})"), keep);
    hub.submit(command(R"({"command":"pause_shuttle","target":"bus_stop_0"})"), keep);
    hub.submit(command(R"({"command":"set_intersection_mode","target":100,"mode":"SHUTTLE_PRIORITY"})"), keep);
    hub.submit(command(R"({"command":"send_external_trajectory","samples":[{"t":1,"x":0,"y":0,"heading":0,"speed":1},{"t":0.5,"x":0,"y":0,"heading":0,"speed":1}]})"),
               keep);
    s.step();
    REQUIRE(acks.size() == 6);
    CHECK(acks[1].ok);
    CHECK(s.trip_active());
    CHECK_FALSE(acks[2].ok);
    CHECK(acks[2].error.find("Busy") != std::string::npos);
    CHECK(acks[3].error.rfind("UnknownTarget:", 0) == 0);
    CHECK(acks[4].error.rfind("UnknownTarget:", 0) == 0);
    CHECK(acks[5].error.rfind("InvalidTrajectory:", 0) == 0);
  }

  TEST_CASE("a valid external trajectory is selected within one tick") {
    sim::Simulation s(manual_scenario());
    CommandHub hub(s);
    for (int i = 0; i < 60; ++i) s.step();
    REQUIRE(s.dispatch_mission(shuttle::Direction::Outbound).empty());
    for (int i = 0; i < 40; ++i) s.step();
    REQUIRE(s.last_output().shuttle.has_value());
    CHECK(s.last_output().shuttle->planner != shuttle::TrajectorySource::External);

    const auto& st = s.shuttle().state();
    const double v = std::max(st.speed, 1.0);
    json samples = json::array();
    for (int k = 0; k <= 30; ++k) {
      const double t = 0.1 * k;
      samples.push_back({{"t", t},
                         {"x", st.pose.position.x + std::cos(st.pose.heading) * v * t},
                         {"y", st.pose.position.y + std::sin(st.pose.heading) * v * t},
                         {"heading", st.pose.heading},
                         {"speed", v}});
    }
    std::optional<Ack> ack;
    hub.submit(parse_command({{"command", "send_external_trajectory"}, {"samples", samples}}),
               [&](const Ack& a) { ack = a; });
    s.step();
    REQUIRE(ack.has_value());
    CHECK_MESSAGE(ack->ok, ack->error);
    CHECK(s.last_output().shuttle->planner == shuttle::TrajectorySource::External);
  }

  TEST_CASE("the audit entry precedes the effect") {
    sim::Simulation s(manual_scenario());
    CommandHub hub(s);
    for (int i = 0; i < 5; ++i) s.step();
    const char* lines[] = {R"({"id":"a","command":"pause_shuttle"})", R"({"id":"b","command":"resume_shuttle"})",
                           R"({"id":"c","command":"set_intersection_mode","mode":"PEDESTRIAN_PRIORITY"})"};
    for (const char* l : lines) {
      const auto before = s.tick_index();
      hub.submit(command(l), [&](const Ack&) {
        const auto log = hub.audit_log();
        CHECK(log.size() == 3);
      });
      const auto log = hub.audit_log();
      REQUIRE_FALSE(log.empty());
      CHECK(log.back().submitted_tick == before);
      CHECK_FALSE(log.back().result.has_value());
    }
    for (int i = 0; i < 3; ++i) s.step();
    const auto log = hub.audit_log();
    REQUIRE(log.size() == 3);
    for (std::size_t i = 0; i < log.size(); ++i) {
      CHECK(log[i].seq == i);
      REQUIRE(log[i].result.has_value());
      CHECK(log[i].result->submitted_tick <= log[i].result->effective_tick);
      CHECK(log[i].result->ok);
    }
    CHECK(log[2].result->id == "c");
  }

  TEST_CASE("live snapshots stay fresh and observing is read-only") {
    auto run = [](bool observe) {
      auto cfg = sim::parse_scenario("name: telemetry\nseed: 9\ntrips: {count: 1}\n");
      sim::Simulation s(cfg);
      Aggregator agg(s.anchor());
      std::size_t checked = 0;
      while (!s.finished()) {
        s.step();
        if (!observe) continue;
        agg.ingest(s.last_output());
        const auto snap = agg.snapshot();
        if (s.tick_index() < 20) continue;
        ++checked;
        CHECK(snap.stale_count() == 0);
        REQUIRE(snap.shuttle.has_value());
        CHECK(snap.sim_time - snap.shuttle->stamp <= 2 * kTick);
        CHECK(snap.sim_time - snap.crossing->stamp <= 2 * kTick);
      }
      if (observe) CHECK(checked > 100);
      s.finalize();
      return s.log().net_digest;
    };
    CHECK(run(true) == run(false));
  }

  TEST_CASE("NDJSON over TCP") {
    sim::Simulation s(manual_scenario());
    ServerOptions o;
    o.port = 0;
    o.speed = 20.0;
    o.max_ticks = 200;
    Server server(s, o);
    const auto port = server.start();
    CHECK(port != 0);

    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
    for (int i = 0; i < 200 && server.clients() == 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    REQUIRE(server.clients() == 1);

    std::thread runner([&] { server.run(); });
    const std::string cmds = R"({"v":1,"id":42,"command":"set_intersection_mode","mode":"PEDESTRIAN_PRIORITY"})"
                             "\n"
                             "not json\n";
    ::send(fd, cmds.data(), cmds.size(), 0);

    std::string buf, line;
    bool snapshot = false, ack = false, error = false;
    while ((!snapshot || !ack || !error) && read_line(fd, buf, line, 3000)) {
      const auto j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "snapshot") {
        snapshot = true;
        CHECK(j["v"] == kSchemaVersion);
      } else if (type == "ack") {
        ack = true;
        CHECK(j["id"] == 42);
        CHECK(j["ok"] == true);
        CHECK(j["submitted_tick"].get<std::uint64_t>() <= j["effective_tick"].get<std::uint64_t>());
      } else if (type == "error") {
        error = true;
      }
    }
    CHECK(snapshot);
    CHECK(ack);
    CHECK(error);
    server.stop();
    runner.join();
    ::close(fd);
    CHECK(s.crossing().state().mode == crossing::Mode::PedestrianPriority);
    CHECK(s.tick_index() <= 200);
  }
}
