#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "v2xlab/codec.hpp"
#include "v2xlab/crossing.hpp"
#include "v2xlab/geo.hpp"
#include "v2xlab/geometry.hpp"
#include "v2xlab/time.hpp"

namespace v2xlab::shuttle {

enum class Direction : std::uint8_t { Outbound, Return };
const char* to_string(Direction d);
Direction parse_direction(const std::string& s);

struct ShuttleConfig {
  // kinematics
  double v_max = 2.5;
  double accel = 0.6;
  double comfort_decel = 0.8;
  double emergency_decel = 3.0;
  double lateral_accel = 0.5;
  double horizon = 8.0;
  double sample_dt = 0.1;
  double max_lateral_error = 2.0;
  double wheelbase = 2.8;

  // obstacles
  double footprint_radius = 1.2;
  double obstacle_clearance = 0.3;
  double stop_margin = 0.5;
  double zone_stop_offset = 1.5;
  double restart_hold = 1.0;

  // docking
  double grid = 0.25;
  int heading_bins = 16;
  double r_min = 3.0;
  double primitive_step = 0.5;
  double heading_cost = 0.1;
  double goal_tolerance = 0.15;
  double goal_heading_tolerance_deg = 5.0;
  double docking_speed = 0.8;
  double docking_range = 10.0;
  double docking_max_range = 25.0;
  std::size_t max_expansions = 60000;
  double expansion_cost_s = 2e-5;
  double cruise_compute_s = 0.02;

  // broker
  double max_compute = 0.3;
  double eps_position = 0.3;
  double eps_heading_deg = 10.0;

  // information freshness
  double spatem_stale = 1.0;
  double cpm_stale = 0.5;
  double merge_radius = 0.5;
  double self_filter_radius = 0.8;
  double self_filter_distance = 2.0;

  // operation
  double dwell = 10.0;
  double soc_start = 80.0;
  double soc_per_km = 1.5;
};

class OffRoute : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NoPath : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RoutePlan {
  std::uint16_t mission_id = 0;
  Direction direction = Direction::Outbound;
  geom::Polyline path;
  geom::Pose start;
  geom::Pose goal;
  std::optional<std::pair<double, double>> turning_segment;  // arc-length interval

  std::vector<double> speed_limit;  // curvature limit after a backward braking pass
  double limit_step = 0.1;

  /// Builds the curvature speed limit. Throws std::invalid_argument for an
  /// empty path or a return plan without a turning segment.
  static RoutePlan make(std::uint16_t mission_id, Direction direction, geom::Polyline path,
                        std::optional<std::pair<double, double>> turning, const ShuttleConfig& config);

  double speed_limit_at(double s) const;
  bool in_turning_segment(double s) const;
  geom::Pose pose_at(double s) const;
};

enum class TrajectorySource : std::uint8_t { Cruise, Docking, External, ControlledStop };
const char* to_string(TrajectorySource s);
int priority(TrajectorySource s);

struct TrajectorySample {
  double t = 0.0;  // seconds after computed_at
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
  bool operator==(const TrajectorySample&) const = default;
};

struct Trajectory {
  TrajectorySource source = TrajectorySource::Cruise;
  std::vector<TrajectorySample> samples;
  SimTime computed_at = 0;
  double compute_duration = 0.0;

  bool empty() const { return samples.empty(); }
  SimTime end_time() const;
  bool exhausted(SimTime now) const;
  /// Linear interpolation; clamps to the first/last sample.
  TrajectorySample sample_at(SimTime time) const;
  /// Throws std::invalid_argument unless t is strictly increasing and speeds are non-negative.
  void validate() const;
};

enum class ObstacleSource : std::uint8_t { Onboard, Cpm };

struct Obstacle {
  geom::Vec2 position;
  geom::Vec2 velocity;
  double radius = 0.25;
  ObstacleSource source = ObstacleSource::Onboard;
  std::uint32_t station_id = 0;  // originating station for CPM objects
  SimTime observed_at = 0;
  SimTime stale_after = 0;

  geom::Vec2 predicted(SimTime t) const { return position + velocity * to_seconds(t - observed_at); }
};

struct ObstacleSet {
  std::vector<Obstacle> objects;
  void purge(SimTime now);
};

struct VehicleState {
  geom::Pose pose;
  double speed = 0.0;
  double route_s = 0.0;
};

/// Conflict-zone interval on the route, used to keep obstacle stops out of the zone.
using ZoneInterval = std::pair<double, double>;

struct CruiseResult {
  Trajectory trajectory;
  double stop_s = 0.0;
  bool obstacle_stop = false;
};

/// Trapezoidal profile along the route towards the nearest stop point.
CruiseResult cruise_plan(const VehicleState& state, const RoutePlan& route, const ObstacleSet& obstacles,
                         std::optional<double> signal_stop_s, std::optional<ZoneInterval> zone,
                         SimTime now, const ShuttleConfig& config);

// Dubins curves with forward motion only.

struct DubinsPath {
  std::string word;          // e.g. "LSL"
  std::array<double, 3> lengths{};  // metres per segment
  double total() const { return lengths[0] + lengths[1] + lengths[2]; }
};

/// All candidate words whose integrated endpoint reaches the goal, shortest first.
std::vector<DubinsPath> dubins_paths(const geom::Pose& start, const geom::Pose& goal, double radius);
std::vector<geom::Pose> sample_dubins(const geom::Pose& start, const DubinsPath& path, double radius, double ds);

struct PlannedPath {
  std::vector<geom::Pose> poses;  // dense, roughly uniform spacing
  double length = 0.0;
  double cost = 0.0;
  std::size_t expansions = 0;
};

/// Hybrid A* over (x, y, heading) lattice states with arc primitives and
/// analytic Dubins expansion. Throws NoPath.
PlannedPath plan_path(const geom::Pose& start, const geom::Pose& goal, std::span<const Obstacle> obstacles,
                      const ShuttleConfig& config);

Trajectory docking_plan(const VehicleState& state, const geom::Pose& target, const ObstacleSet& obstacles,
                        SimTime now, const ShuttleConfig& config);

/// Samples a path under a speed cap and stop at its end.
Trajectory time_parameterize(std::span<const geom::Pose> poses, double v0, double v_cap,
                             TrajectorySource source, SimTime now, const ShuttleConfig& config);

Trajectory controlled_stop(const VehicleState& state, SimTime now, const ShuttleConfig& config);

enum class SwitchOutcome : std::uint8_t { Selected, RetainedActive, ControlledStop };

struct SwitchDecision {
  Trajectory trajectory;
  SwitchOutcome outcome = SwitchOutcome::Selected;
  std::optional<std::size_t> candidate_index;
  std::vector<std::string> rejections;
};

/// Returns an empty string when the candidate satisfies the handover rules at `now`.
std::string handover_violation(const Trajectory& candidate, const VehicleState& state, SimTime now,
                               const ShuttleConfig& config);

SwitchDecision switch_box(const std::optional<Trajectory>& active, std::span<const Trajectory> candidates,
                          const VehicleState& state, SimTime now, const ShuttleConfig& config);

struct SpatemView {
  codec::SpatemPayload spatem;
  SimTime received_at = 0;
};

enum class YieldReason : std::uint8_t { Green, Red, FailSafe, Infeasible, NoMapMatch, Passed };
const char* to_string(YieldReason r);

struct YieldResult {
  std::optional<double> stop_s;
  YieldReason reason = YieldReason::Green;
};

/// Conflict zone mapped onto the route; none when the MAPEM does not match it.
std::optional<ZoneInterval> match_map(const crossing::MapView& map, const RoutePlan& route);

YieldResult yield_decision(const std::optional<SpatemView>& spatem, std::optional<ZoneInterval> zone,
                           std::uint8_t signal_group, const VehicleState& state, SimTime now,
                           const ShuttleConfig& config);

struct CpmView {
  std::uint32_t station_id = 0;
  codec::CpmPayload cpm;
  SimTime received_at = 0;
};

struct OnboardDetection {
  geom::Vec2 position;
  geom::Vec2 velocity;
  double radius = 0.25;
};

struct FusionResult {
  ObstacleSet obstacles;
  std::size_t unknown_station = 0;
  std::size_t stale = 0;
  std::size_t merged = 0;
  std::size_t self_filtered = 0;
};

/// Station id -> station reference point in ENU.
using StationRegistry = std::map<std::uint32_t, geom::Vec2>;

/// `epoch_ms` maps CPM reference times onto the simulation clock.
FusionResult fuse_obstacles(std::span<const OnboardDetection> onboard, std::span<const CpmView> cpms,
                            const StationRegistry& stations, geom::Vec2 self_position, SimTime now,
                            std::uint64_t epoch_ms, const ShuttleConfig& config);

struct MissionInfo {
  std::uint16_t mission_id = 0;
  std::uint16_t progress = 0;
};

codec::CamPayload emit_cam(const VehicleState& state, const MissionInfo& mission, std::uint8_t doors,
                           codec::Indicator indicator, const geo::GeoAnchor& anchor, SimTime now,
                           std::uint64_t epoch_ms);

enum class DrivingStatus : std::uint8_t { Manual, Autonomous };
const char* to_string(DrivingStatus s);

struct TickInputs {
  std::vector<codec::V2xMessage> received;
  std::vector<std::uint32_t> received_from;
  std::vector<OnboardDetection> onboard;
};

struct TickReport {
  codec::CamPayload cam;
  bool mission_completed = false;
  std::optional<TrajectorySource> planner;
  SwitchOutcome switch_outcome = SwitchOutcome::Selected;
  YieldResult yield;
  std::size_t obstacles = 0;
  double steering_angle = 0.0;
  bool handover = false;
  double handover_position_jump = 0.0;
  double handover_heading_jump = 0.0;
};

/// The vehicle's per-tick pipeline: sense, fuse, plan, broker, act, emit.
class ShuttleAgent {
 public:
  ShuttleAgent(std::uint32_t station_id, geo::GeoAnchor anchor, std::uint64_t epoch_ms,
               StationRegistry stations, ShuttleConfig config);

  /// Throws std::logic_error when a mission is already active.
  void dispatch(RoutePlan route, SimTime now);
  /// Places the vehicle (manual repositioning between missions).
  void reposition(const geom::Pose& pose);
  /// Drops the current mission without completing it.
  void abort_mission();
  void set_driving_status(DrivingStatus s) { driving_status_ = s; }
  void pause() { paused_ = true; }
  void resume() { paused_ = false; }
  bool paused() const { return paused_; }

  /// Accepts an external trajectory if it passes the handover rules now; returns the rejection reason otherwise.
  std::string offer_external(Trajectory trajectory, SimTime now);

  TickReport tick(SimTime now, const TickInputs& inputs);

  std::uint32_t station_id() const { return station_id_; }
  const VehicleState& state() const { return state_; }
  bool mission_active() const { return route_.has_value() && !completed_; }
  bool dwelling(SimTime now) const { return dwell_until_ && now < *dwell_until_; }
  const std::optional<RoutePlan>& route() const { return route_; }
  const std::optional<Trajectory>& active_trajectory() const { return active_; }
  const std::optional<crossing::MapView>& map() const { return map_; }
  std::optional<ZoneInterval> zone_on_route() const { return zone_; }
  DrivingStatus driving_status() const { return driving_status_; }
  double state_of_charge() const { return soc_; }
  std::uint8_t door_status() const { return doors_; }
  codec::Indicator indicator() const { return indicator_; }
  MissionInfo mission() const { return mission_; }
  const ShuttleConfig& config() const { return config_; }
  const ObstacleSet& obstacles() const { return last_obstacles_; }
  std::size_t unknown_station_count() const { return unknown_station_; }

 private:
  void ingest(SimTime now, const TickInputs& inputs);
  void update_route_s();

  std::uint32_t station_id_;
  geo::GeoAnchor anchor_;
  std::uint64_t epoch_ms_;
  StationRegistry stations_;
  ShuttleConfig config_;

  VehicleState state_;
  std::optional<RoutePlan> route_;
  bool completed_ = false;
  MissionInfo mission_;
  std::optional<SimTime> dwell_until_;
  std::optional<Trajectory> active_;
  std::optional<Trajectory> external_;
  std::optional<SpatemView> spatem_;
  std::optional<crossing::MapView> map_;
  std::optional<ZoneInterval> zone_;
  std::map<std::uint32_t, CpmView> cpms_;
  ObstacleSet last_obstacles_;
  std::optional<SimTime> blocked_at_;
  DrivingStatus driving_status_ = DrivingStatus::Manual;
  bool paused_ = false;
  double soc_ = 80.0;
  std::uint8_t doors_ = 0;
  codec::Indicator indicator_ = codec::Indicator::Off;
  std::size_t unknown_station_ = 0;
};

}  // namespace v2xlab::shuttle
