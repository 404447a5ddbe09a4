#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "v2xlab/codec.hpp"
#include "v2xlab/geo.hpp"
#include "v2xlab/geometry.hpp"
#include "v2xlab/time.hpp"

namespace v2xlab::crossing {

enum class Phase : std::uint8_t { PedGreen, PedClearance, PedRed };
enum class Mode : std::uint8_t { ShuttlePriority, PedestrianPriority };

const char* to_string(Phase p);
const char* to_string(Mode m);
Phase parse_phase(const std::string& s);
Mode parse_mode(const std::string& s);

inline constexpr std::uint8_t kShuttleSignalGroup = 1;
inline constexpr std::uint8_t kCrosswalkSignalGroup = 2;

struct CrossingConfig {
  double t_near = 12.0;
  double t_far = 30.0;
  double t_clear = 4.0;
  double hold_window = 15.0;
  double exit_margin = 2.0;
  double v_floor = 0.5;
  double off_route_distance = 5.0;
};

/// Shuttle lane plus the conflict zone, with the zone's arc-length interval cached.
struct LaneGeometry {
  geom::Polyline lane;
  geom::Polygon conflict_zone;
  double s_enter = 0.0;
  double s_exit = 0.0;

  /// Throws std::invalid_argument when the lane does not pass through the zone.
  static LaneGeometry make(geom::Polyline lane, geom::Polygon zone);
};

struct ShuttleObservation {
  std::optional<double> eta;  // seconds; none when past, heading away, or off route
  double zone_distance = 0.0;
  bool inside = false;
  bool off_route = false;
};

/// Position-level form of the ETA estimate (heading in ENU radians).
ShuttleObservation observe(geom::Vec2 position, std::optional<double> heading, double speed,
                           const LaneGeometry& lane, const CrossingConfig& config = {});

ShuttleObservation observe(const codec::CamPayload& cam, const LaneGeometry& lane,
                           const geo::GeoAnchor& anchor, const CrossingConfig& config = {});

std::optional<double> estimate_eta(const codec::CamPayload& cam, const LaneGeometry& lane,
                                   const geo::GeoAnchor& anchor, const CrossingConfig& config = {});

struct CrossingState {
  Phase phase = Phase::PedGreen;
  Mode mode = Mode::ShuttlePriority;
  SimTime phase_entered_at = 0;
  std::optional<SimTime> scheduled_change_at;
  std::optional<double> shuttle_eta;
  std::optional<SimTime> hold_started;
  std::uint8_t revision = 0;
  bool operator==(const CrossingState&) const = default;
};

struct PhaseChange {
  SimTime at = 0;
  Phase from = Phase::PedGreen;
  Phase to = Phase::PedGreen;
};

struct StepResult {
  CrossingState state;
  std::optional<PhaseChange> change;
};

/// One tick of the two-mode signal automaton.
StepResult step(const CrossingState& state, SimTime now, const std::optional<ShuttleObservation>& shuttle,
                const CrossingConfig& config = {});

/// Event state of a signal group for the given phase.
codec::EventState lane_state(Phase p);
codec::EventState crosswalk_state(Phase p);

codec::SpatemPayload emit_spatem(const CrossingState& state, SimTime now, std::uint16_t intersection_id);

/// MAPEM with the shuttle lane (vehicle, group 1) and the crosswalk (group 2).
/// The crosswalk lane's nodes trace the conflict-zone outline.
codec::MapemPayload build_mapem(const LaneGeometry& lane, const geo::GeoAnchor& anchor,
                                geom::Vec2 reference, std::uint16_t intersection_id);

/// Lane and zone recovered from a received MAPEM.
struct MapView {
  geom::Polyline vehicle_lane;
  geom::Polygon conflict_zone;
  std::uint8_t vehicle_signal_group = kShuttleSignalGroup;
};

std::optional<MapView> decode_mapem(const codec::MapemPayload& map, const geo::GeoAnchor& anchor);

struct PhaseLogEntry {
  SimTime at = 0;
  Phase phase = Phase::PedGreen;
  bool operator==(const PhaseLogEntry&) const = default;
};

class EmptyLog : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RedTimeResult {
  double red_seconds = 0.0;
  double horizon_seconds = 0.0;
  double fraction_immediate_cross = 1.0;
};

/// Red time counts PED_CLEARANCE and PED_RED. The log's first entry must not
/// start after `start`.
RedTimeResult red_time_fraction(std::span<const PhaseLogEntry> log, SimTime start, SimTime end);

class CrossingController {
 public:
  CrossingController(LaneGeometry lane, geo::GeoAnchor anchor, CrossingConfig config,
                     std::uint16_t intersection_id, Mode mode = Mode::ShuttlePriority);

  void on_cam(const codec::CamPayload& cam);
  void set_mode(Mode mode) { state_.mode = mode; }

  codec::SpatemPayload spatem(SimTime now) const { return emit_spatem(state_, now, intersection_id_); }
  std::optional<PhaseChange> step(SimTime now);

  const CrossingState& state() const { return state_; }
  const LaneGeometry& lane() const { return lane_; }
  const CrossingConfig& config() const { return config_; }
  const std::optional<ShuttleObservation>& last_observation() const { return observation_; }
  const std::vector<PhaseLogEntry>& phase_log() const { return log_; }
  std::uint64_t off_route_count() const { return off_route_count_; }

 private:
  LaneGeometry lane_;
  geo::GeoAnchor anchor_;
  CrossingConfig config_;
  std::uint16_t intersection_id_;
  CrossingState state_;
  std::optional<codec::CamPayload> latest_cam_;
  std::optional<ShuttleObservation> observation_;
  std::vector<PhaseLogEntry> log_;
  std::uint64_t off_route_count_ = 0;
};

}  // namespace v2xlab::crossing
