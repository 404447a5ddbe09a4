#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "v2xlab/simcore.hpp"

namespace v2xlab::telemetry {

inline constexpr int kSchemaVersion = 1;
inline constexpr SimTime kStaleAfter = 1'000'000'000;

struct Box {
  geom::Vec2 position;
  double radius = 0.0;
};

struct ShuttleView {
  geom::Vec2 position;
  double heading = 0.0;
  double speed = 0.0;
  std::optional<double> soc;
  codec::Indicator indicator = codec::Indicator::Off;
  std::uint8_t door = 0;
  std::uint16_t mission_id = 0;
  std::uint16_t progress = 0;
  std::optional<shuttle::DrivingStatus> driving_status;
  bool paused = false;
  SimTime stamp = 0;
};

struct CrossingView {
  crossing::Phase phase = crossing::Phase::PedGreen;
  std::optional<crossing::Mode> mode;
  std::optional<double> countdown;  // seconds to the crosswalk's next change
  SimTime stamp = 0;
};

struct BusStopView {
  std::uint32_t station_id = 0;
  std::optional<std::size_t> pedestrian_count;
  std::vector<Box> boxes;  // pedestrians from the latest CPM
  std::optional<SimTime> last_seen;
  bool stale = true;
};

struct SystemSnapshot {
  std::uint64_t tick = 0;
  SimTime sim_time = 0;
  std::optional<ShuttleView> shuttle;  // absent until the first CAM
  bool shuttle_stale = true;
  std::optional<CrossingView> crossing;
  bool crossing_stale = true;
  std::vector<BusStopView> bus_stops;
  std::map<std::uint32_t, SimTime> last_seen;

  std::size_t stale_count() const;
};

nlohmann::json to_json(const SystemSnapshot& s);

/// Merges each tick's broadcasts and backend channels into the latest state.
/// Feeds are flagged stale when silent for more than one second.
class Aggregator {
 public:
  explicit Aggregator(geo::GeoAnchor anchor, std::size_t bus_stops = 2);

  void ingest(const sim::TickOutput& out);
  SystemSnapshot snapshot() const { return snap_; }

 private:
  void refresh_staleness();

  geo::GeoAnchor anchor_;
  SystemSnapshot snap_;
};

// Commands.

enum class CommandKind : std::uint8_t { SetIntersectionMode, DispatchMission, PauseShuttle, ResumeShuttle,
                                        SendExternalTrajectory };
const char* to_string(CommandKind k);

struct Command {
  nlohmann::json id;  // echoed in the ack
  CommandKind kind = CommandKind::PauseShuttle;
  std::string target;
  std::optional<crossing::Mode> mode;
  std::optional<shuttle::Direction> direction;
  std::vector<shuttle::TrajectorySample> samples;
};

class BadCommand : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// {"v":1,"id":..,"command":"set_intersection_mode","target":"crossing","mode":"PEDESTRIAN_PRIORITY"}.
/// Targets default to "crossing" for mode changes and "shuttle" otherwise; station ids are accepted too.
Command parse_command(const nlohmann::json& j);

struct Ack {
  nlohmann::json id;
  CommandKind kind = CommandKind::PauseShuttle;
  bool ok = false;
  std::string error;  // "<Kind>: reason"
  std::uint64_t submitted_tick = 0;
  std::uint64_t effective_tick = 0;
};

nlohmann::json to_json(const Ack& a);

struct AuditEntry {
  std::uint64_t seq = 0;
  Command command;
  std::uint64_t submitted_tick = 0;
  std::optional<Ack> result;  // set once applied
};

/// Queues operator commands and applies them at the start of the next tick
/// through the simulation's pre-tick hook.
class CommandHub {
 public:
  using Reply = std::function<void(const Ack&)>;

  /// Installs the pre-tick hook; the hub must outlive the simulation's run.
  explicit CommandHub(sim::Simulation& sim);

  /// Thread-safe; the reply runs on the simulation thread.
  void submit(Command command, Reply reply = {});
  std::vector<AuditEntry> audit_log() const;
  std::size_t pending() const;

 private:
  void drain(sim::Simulation& sim);
  Ack apply(sim::Simulation& sim, const Command& c);

  mutable std::mutex mu_;
  std::deque<std::pair<std::uint64_t, Reply>> queue_;  // audit seq, reply
  std::vector<AuditEntry> audit_;
  sim::Simulation* sim_;
};

// NDJSON over TCP.

struct ServerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 7070;  // 0 picks a free port
  double snapshot_hz = 10.0;
  double speed = 1.0;     // simulated seconds per wall second; 0 runs unthrottled
  std::optional<std::uint64_t> max_ticks;
};

/// Full-duplex line protocol: snapshots ({"type":"snapshot",..}) are pushed to
/// every client, and each line a client sends is a command answered with an ack
/// ({"type":"ack",..}) or an error ({"type":"error",..}).
class Server {
 public:
  Server(sim::Simulation& sim, ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and listens; returns the bound port.
  std::uint16_t start();
  /// Drives the simulation until stop() or max_ticks.
  void run();
  void stop() { stop_ = true; }
  std::uint16_t port() const { return port_; }
  const Aggregator& aggregator() const { return agg_; }
  const CommandHub& hub() const { return hub_; }
  std::size_t clients() const;

 private:
  void io_loop();
  void send_line(int fd, const std::string& line);
  void broadcast_line(const std::string& line);
  void handle_line(int fd, const std::string& line);

  sim::Simulation& sim_;
  ServerOptions options_;
  Aggregator agg_;
  CommandHub hub_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  std::thread io_;
  mutable std::mutex clients_mu_;
  std::map<int, std::string> clients_;  // fd -> partial input line
  std::mutex write_mu_;
};

}  // namespace v2xlab::telemetry
