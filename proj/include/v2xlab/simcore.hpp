#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "v2xlab/codec.hpp"
#include "v2xlab/crossing.hpp"
#include "v2xlab/datastore.hpp"
#include "v2xlab/geo.hpp"
#include "v2xlab/geometry.hpp"
#include "v2xlab/netbus.hpp"
#include "v2xlab/perception.hpp"
#include "v2xlab/shuttle.hpp"
#include "v2xlab/time.hpp"

namespace v2xlab::sim {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IncompleteTrip : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kShuttleStation = 100;
inline constexpr std::uint32_t kCrossingStation = 200;
inline constexpr std::uint32_t kBusStopStation0 = 300;
inline constexpr std::uint16_t kIntersectionId = 1;

enum class SpawnKind : std::uint8_t { Crosswalk, BusStop, OnRed };
const char* to_string(SpawnKind k);

struct SpawnProcess {
  SpawnKind kind = SpawnKind::Crosswalk;
  double rate = 0.0;           // arrivals per second (unused for on_red)
  double compliance = 1.0;     // probability an arrival respects the signal
  int stop = 0;                // bus stop index for bus_stop processes
};

/// Pedestrian that steps into the zone a fixed time after the crosswalk turns
/// red on a given trip (or after the previous blocker of that trip left) and
/// stays until the shuttle has stood still in front of it for `duration`.
struct ScriptedBlock {
  std::size_t trip = 0;
  double after_red = 0.0;
  std::optional<double> after_previous;
  double duration = 10.0;
  double x = 40.0;
};

struct TripSpec {
  shuttle::Direction direction = shuttle::Direction::Outbound;
  crossing::Mode mode = crossing::Mode::ShuttlePriority;
};

struct Obstruction {
  std::string name;
  geom::Polygon polygon;
};

/// Loss zone applied to a map obstruction referenced by name.
struct ZoneRef {
  std::string obstruction;
  double extra_loss = 0.0;
  net::ZoneMode mode = net::ZoneMode::SegmentCrosses;
};

struct NetworkConfig {
  double base_loss = 0.0;
  double latency_mean_ms = 5.0;
  double latency_jitter_ms = 2.0;
  std::vector<ZoneRef> zones;
};

struct MapConfig {
  geom::Polyline lane{{{0.0, 0.0}, {80.0, 0.0}}};
  geom::Polygon conflict_zone{{38.5, -1.5}, {41.5, -1.5}, {41.5, 1.5}, {38.5, 1.5}};
  std::vector<geom::Pose> bus_stops{{{5.0, 0.0}, 0.0}, {{75.0, 0.0}, 0.0}};
  double curb_offset = 2.0;            // crosswalk curbs at +-offset from the lane
  double turnaround_length = 12.0;     // return trips rejoin the lane this far behind stop 1
  double sensor_offset = -3.5;         // bus-stop sensor lateral offset
  double platform_near = 2.5;          // passenger area, lateral band (right of the lane)
  double platform_far = 4.0;
  double platform_half_length = 3.0;
  std::vector<Obstruction> obstructions;
};

struct Emission {
  int cam_ms = 100;
  int cpm_ms = 100;
  int spatem_ms = 100;
  int mapem_ms = 1000;
};

struct PedestrianConfig {
  double speed_min = 0.8;
  double speed_max = 1.6;
  double hazard = 0.5;          // per-tick red-crossing probability when triggered
  double trigger_range = 20.0;  // shuttle distance that triggers red crossings
  std::vector<SpawnProcess> processes;
  std::vector<ScriptedBlock> scripted;
};

struct ScenarioConfig {
  std::string name = "default";
  std::uint64_t seed = 1;
  int tick_ms = 100;
  std::uint64_t epoch_ms = 1696320000000ULL;  // 2023-10-03T08:00:00Z
  double anchor_lat = 48.1372;
  double anchor_lon = 11.5755;
  MapConfig map;
  NetworkConfig network;
  crossing::CrossingConfig intersection;
  crossing::Mode initial_mode = crossing::Mode::ShuttlePriority;
  shuttle::ShuttleConfig shuttle;
  Emission emission;
  PedestrianConfig pedestrians;
  std::vector<TripSpec> trips;
  bool auto_dispatch = true;
  double max_trip_seconds = 600.0;
  std::size_t warmup_ticks = 50;
  double sensor_range = 50.0;
  double onboard_range = 15.0;
  bool record_planned_every_tick = false;

  SimTime tick() const { return from_millis(tick_ms); }
  /// Throws ConfigError.
  void validate() const;
  /// Resolves zone references against the map; throws ConfigError.
  net::LossModel loss_model() const;
};

ScenarioConfig parse_scenario(const std::string& yaml_text);
ScenarioConfig load_scenario(const std::filesystem::path& path);
std::string to_yaml(const ScenarioConfig& config);

// Pedestrians.

enum class PedState : std::uint8_t { Waiting, Crossing, AtStop, Done };
enum class PedGoal : std::uint8_t { Cross, Board, Block };
const char* to_string(PedState s);

struct PedestrianAgent {
  std::uint32_t id = 0;
  geom::Vec2 position;
  geom::Vec2 origin;  // curb or platform spot
  geom::Vec2 target;
  PedGoal goal = PedGoal::Cross;
  bool compliant = true;
  PedState state = PedState::Waiting;
  double speed = 1.2;
  int stop = -1;
  SimTime spawned_at = 0;
  std::optional<SimTime> release_at;  // scripted blockers
  geom::Vec2 velocity;
  bool entered_zone = false;
};

struct ArrivalDraw {
  bool compliant = true;
  double speed = 1.2;
  double lateral = 0.0;  // uniform in [0, 1), placement along the crosswalk or platform
  bool side = false;     // crossing direction
};

/// Thinned Bernoulli arrivals: at most one per tick with P = rate * tick.
std::vector<ArrivalDraw> spawn_pedestrians(const SpawnProcess& process, std::mt19937_64& rng, double tick_s,
                                           double speed_min = 0.8, double speed_max = 1.6);

// World trace.

struct PedSnapshot {
  std::uint32_t id = 0;
  geom::Vec2 position;
  PedState state = PedState::Waiting;
  bool compliant = true;
  bool in_zone = false;
};

struct TraceTick {
  SimTime t = 0;
  int trip = -1;  // index into RunLog::trips while a trip is being driven
  geom::Pose shuttle_pose;
  double shuttle_speed = 0.0;
  bool shuttle_in_zone = false;
  bool shuttle_rendered = true;
  crossing::Phase phase = crossing::Phase::PedGreen;
  crossing::Mode mode = crossing::Mode::ShuttlePriority;
  std::vector<PedSnapshot> pedestrians;
};

struct TripSummary {
  std::size_t index = 0;
  std::uint16_t mission_id = 0;
  shuttle::Direction direction = shuttle::Direction::Outbound;
  crossing::Mode mode = crossing::Mode::ShuttlePriority;
  SimTime dispatched_at = 0;
  std::optional<SimTime> completed_at;
  std::size_t zone_entries = 0;
  double travel_time() const { return completed_at ? to_seconds(*completed_at - dispatched_at) : 0.0; }
};

struct RunLog {
  std::vector<TraceTick> trace;
  std::vector<TripSummary> trips;
  std::vector<crossing::PhaseLogEntry> phase_log;
  std::vector<std::pair<SimTime, crossing::Mode>> mode_log;
  std::vector<codec::SpatemPayload> spatem;  // one per tick
  std::uint64_t net_digest = 0;
  std::uint64_t pedestrians_spawned = 0;
  std::uint64_t pedestrians_done = 0;
  std::size_t shuttle_in_zone_on_green = 0;
  geom::Polygon conflict_zone;
};

void write_world_trace(const std::filesystem::path& path, const RunLog& log);
/// Reads the trace written by write_world_trace. Phase and mode logs are rebuilt
/// from the per-tick crossing rows; SPATEM payloads and the net digest are not stored.
RunLog read_world_trace(const std::filesystem::path& path);

/// Standstill with the shuttle lane on green while a pedestrian stands in the
/// conflict zone ahead of the shuttle, summed over the trip. Throws IncompleteTrip.
double measure_stop_delay(const RunLog& log, std::size_t trip);

// Simulation.

struct BroadcastRecord {
  std::uint32_t sender = 0;
  std::uint64_t sequence = 0;
  codec::V2xMessage message;
};

struct TickOutput {
  SimTime t = 0;
  std::uint64_t tick = 0;
  std::vector<BroadcastRecord> broadcasts;
  std::vector<std::size_t> stop_pedestrian_counts;  // direct bus-stop channel
  std::vector<std::vector<perception::Detection>> stop_detections;
  std::optional<shuttle::TickReport> shuttle;
  bool mission_completed = false;
  // Backend channels that do not travel over V2X.
  struct VehicleStatus {
    double soc = 0.0;
    shuttle::DrivingStatus driving_status = shuttle::DrivingStatus::Manual;
    bool paused = false;
  };
  std::optional<VehicleStatus> vehicle;
  std::optional<crossing::Mode> crossing_mode;
};

class Simulation {
 public:
  /// With `out_dir`, the dataset is written to out_dir/dataset and the trace to
  /// out_dir/world_trace.csv when the run finishes.
  explicit Simulation(ScenarioConfig config, std::optional<std::filesystem::path> out_dir = std::nullopt);
  ~Simulation();
  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  void step();
  bool finished() const;
  /// Runs until every scheduled trip has ended, then finalizes outputs.
  const RunLog& run();
  void finalize();

  SimTime now() const { return now_; }
  std::uint64_t tick_index() const { return tick_; }
  const ScenarioConfig& config() const { return config_; }
  const RunLog& log() const { return log_; }
  const TickOutput& last_output() const { return output_; }

  const shuttle::ShuttleAgent& shuttle() const { return *shuttle_; }
  const crossing::CrossingController& crossing() const { return *crossing_; }
  const net::NetBus& bus() const { return *bus_; }
  const std::vector<PedestrianAgent>& pedestrians() const { return peds_; }
  const perception::BusStopPipeline& pipeline(int stop) const { return pipelines_.at(stop); }
  const geo::GeoAnchor& anchor() const { return anchor_; }
  const shuttle::RoutePlan& route_template(shuttle::Direction d) const;
  std::size_t trips_completed() const;
  bool trip_active() const;

  // Operator controls; they act immediately and are meant to be called between ticks.
  void set_intersection_mode(crossing::Mode mode);
  /// Returns an empty string on success, else the rejection reason.
  std::string dispatch_mission(shuttle::Direction direction);
  void pause_shuttle();
  void resume_shuttle();
  std::string send_external_trajectory(shuttle::Trajectory trajectory);

  /// Called at the start of every tick before any station runs.
  void set_pre_tick_hook(std::function<void(Simulation&)> hook) { hook_ = std::move(hook); }

 private:
  struct Recorder;

  void build_world();
  void advance_pedestrians();
  void spawn(SimTime t);
  void run_bus_stops();
  void run_crossing();
  void run_shuttle();
  void schedule_trips();
  void start_trip(const TripSpec& spec, bool scheduled);
  void record_tick();
  perception::Scan make_scan(int stop) const;
  std::vector<shuttle::OnboardDetection> onboard_detections() const;
  net::NetBus::BroadcastResult broadcast(std::uint32_t sender, codec::Payload payload);
  void release_blocker(const PedestrianAgent& p);
  bool in_zone(geom::Vec2 p) const;

  ScenarioConfig config_;
  std::optional<std::filesystem::path> out_dir_;
  geo::GeoAnchor anchor_;
  std::unique_ptr<net::NetBus> bus_;
  std::unique_ptr<crossing::CrossingController> crossing_;
  std::unique_ptr<shuttle::ShuttleAgent> shuttle_;
  std::vector<perception::BusStopPipeline> pipelines_;
  std::vector<perception::StationAnchor> stop_anchors_;
  std::vector<std::vector<perception::ScanPoint>> stop_background_;
  std::vector<std::vector<perception::Scan>> learning_;
  std::optional<shuttle::RoutePlan> outbound_;
  std::optional<shuttle::RoutePlan> return_;
  std::vector<PedestrianAgent> peds_;
  std::mt19937_64 rng_;
  std::uint32_t next_ped_id_ = 1;
  SimTime now_ = 0;
  std::uint64_t tick_ = 0;
  std::size_t next_trip_ = 0;
  std::optional<std::size_t> active_trip_;
  bool reposition_pending_ = false;
  std::optional<SimTime> red_since_;
  crossing::Phase last_phase_ = crossing::Phase::PedGreen;
  bool was_in_zone_ = false;
  bool finalized_ = false;
  struct BlockState {
    std::optional<SimTime> appear_at;
    std::optional<std::uint32_t> ped;
    bool released = false;
  };
  std::vector<BlockState> blocks_;
  std::unique_ptr<Recorder> recorder_;
  std::function<void(Simulation&)> hook_;
  RunLog log_;
  TickOutput output_;
};

}  // namespace v2xlab::sim
