#include "v2xlab/crossing.hpp"

#include <algorithm>
#include <cmath>

namespace v2xlab::crossing {

const char* to_string(Phase p) {
  switch (p) {
    case Phase::PedGreen: return "PED_GREEN";
    case Phase::PedClearance: return "PED_CLEARANCE";
    case Phase::PedRed: return "PED_RED";
  }
  return "unknown";
}

const char* to_string(Mode m) {
  return m == Mode::ShuttlePriority ? "SHUTTLE_PRIORITY" : "PEDESTRIAN_PRIORITY";
}

Phase parse_phase(const std::string& s) {
  if (s == "PED_GREEN") return Phase::PedGreen;
  if (s == "PED_CLEARANCE") return Phase::PedClearance;
  if (s == "PED_RED") return Phase::PedRed;
  throw std::invalid_argument("unknown phase '" + s + "'");
}

Mode parse_mode(const std::string& s) {
  if (s == "SHUTTLE_PRIORITY") return Mode::ShuttlePriority;
  if (s == "PEDESTRIAN_PRIORITY") return Mode::PedestrianPriority;
  throw std::invalid_argument("unknown intersection mode '" + s + "'");
}

LaneGeometry LaneGeometry::make(geom::Polyline lane, geom::Polygon zone) {
  if (lane.empty()) throw std::invalid_argument("lane polyline needs two points");
  if (!geom::is_simple_polygon(zone)) throw std::invalid_argument("conflict zone is not a simple polygon");
  auto interval = lane.interval_inside(zone, 0.01);
  if (!interval) throw std::invalid_argument("lane does not pass through the conflict zone");
  LaneGeometry g;
  g.lane = std::move(lane);
  g.conflict_zone = std::move(zone);
  g.s_enter = interval->first;
  g.s_exit = interval->second;
  return g;
}

ShuttleObservation observe(geom::Vec2 position, std::optional<double> heading, double speed,
                           const LaneGeometry& lane, const CrossingConfig& config) {
  ShuttleObservation o;
  o.zone_distance = geom::distance_to_polygon(position, lane.conflict_zone);
  o.inside = geom::point_in_polygon(position, lane.conflict_zone);
  if (o.inside) {
    o.eta = 0.0;
    return o;
  }
  const auto proj = lane.lane.project(position);
  if (proj.distance > config.off_route_distance) {
    o.off_route = true;
    return o;
  }
  if (!heading) return o;
  const double rel = geom::wrap_angle(*heading - lane.lane.heading_at(proj.s));
  const double along = std::cos(rel);
  double remaining = 0.0;
  if (along > 0.0) {
    if (proj.s > lane.s_exit) return o;
    remaining = std::max(0.0, lane.s_enter - proj.s);
  } else if (along < 0.0) {
    if (proj.s < lane.s_enter) return o;
    remaining = std::max(0.0, proj.s - lane.s_exit);
  } else {
    return o;
  }
  o.eta = remaining / std::max(speed, config.v_floor);
  return o;
}

ShuttleObservation observe(const codec::CamPayload& cam, const LaneGeometry& lane,
                           const geo::GeoAnchor& anchor, const CrossingConfig& config) {
  const geom::Vec2 pos = anchor.to_enu_e7(cam.latitude, cam.longitude);
  std::optional<double> heading;
  if (cam.heading < codec::kHeadingUnavailable) heading = geo::cam_heading_to_enu(cam.heading);
  const double speed = cam.speed == codec::kSpeedUnavailable ? 0.0 : cam.speed / 100.0;
  return observe(pos, heading, speed, lane, config);
}

std::optional<double> estimate_eta(const codec::CamPayload& cam, const LaneGeometry& lane,
                                   const geo::GeoAnchor& anchor, const CrossingConfig& config) {
  return observe(cam, lane, anchor, config).eta;
}

StepResult step(const CrossingState& state, SimTime now, const std::optional<ShuttleObservation>& shuttle,
                const CrossingConfig& config) {
  StepResult r{state, std::nullopt};
  CrossingState& s = r.state;
  s.shuttle_eta = shuttle ? shuttle->eta : std::nullopt;
  const auto& eta = s.shuttle_eta;
  const bool near = eta && *eta <= config.t_near;
  const bool far_or_none = !eta || *eta > config.t_far;

  auto enter = [&](Phase p) {
    r.change = PhaseChange{now, s.phase, p};
    s.phase = p;
    s.phase_entered_at = now;
    s.hold_started.reset();
    ++s.revision;
  };

  switch (s.phase) {
    case Phase::PedGreen:
      if (far_or_none) s.hold_started.reset();
      if (s.mode == Mode::ShuttlePriority) {
        if (near) enter(Phase::PedClearance);
      } else {
        if (near && !s.hold_started) s.hold_started = now;
        if (s.hold_started && now - *s.hold_started >= from_seconds(config.hold_window)) {
          enter(Phase::PedClearance);
        }
      }
      break;
    case Phase::PedClearance:
      if (now - s.phase_entered_at >= from_seconds(config.t_clear)) enter(Phase::PedRed);
      break;
    case Phase::PedRed: {
      const bool clear = !shuttle || (!shuttle->inside && shuttle->zone_distance > config.exit_margin && far_or_none);
      if (clear) enter(Phase::PedGreen);
      break;
    }
  }

  switch (s.phase) {
    case Phase::PedGreen:
      if (s.hold_started) {
        s.scheduled_change_at = *s.hold_started + from_seconds(config.hold_window);
      } else {
        s.scheduled_change_at.reset();
      }
      break;
    case Phase::PedClearance:
      s.scheduled_change_at = s.phase_entered_at + from_seconds(config.t_clear);
      break;
    case Phase::PedRed:
      s.scheduled_change_at.reset();
      break;
  }
  return r;
}

codec::EventState lane_state(Phase p) {
  return p == Phase::PedRed ? codec::EventState::ProtectedMovementAllowed : codec::EventState::StopAndRemain;
}

codec::EventState crosswalk_state(Phase p) {
  switch (p) {
    case Phase::PedGreen: return codec::EventState::ProtectedMovementAllowed;
    case Phase::PedClearance: return codec::EventState::ProtectedClearance;
    case Phase::PedRed: return codec::EventState::StopAndRemain;
  }
  return codec::EventState::StopAndRemain;
}

codec::SpatemPayload emit_spatem(const CrossingState& state, SimTime now, std::uint16_t intersection_id) {
  std::uint16_t ttc = codec::kTimeToChangeUnknown;
  if (state.scheduled_change_at) {
    constexpr SimTime kDecisecond = kNanosPerSecond / 10;
    const SimTime remaining = std::max<SimTime>(0, *state.scheduled_change_at - now);
    ttc = static_cast<std::uint16_t>(std::min<SimTime>(36000, (remaining + kDecisecond - 1) / kDecisecond));
  }
  codec::SpatemPayload p;
  p.intersection_id = intersection_id;
  p.revision = state.revision;
  p.movements.push_back({kShuttleSignalGroup, lane_state(state.phase), ttc});
  p.movements.push_back({kCrosswalkSignalGroup, crosswalk_state(state.phase), ttc});
  return p;
}

namespace {

codec::LaneNode to_node(geom::Vec2 p, geom::Vec2 ref) {
  auto cm = [](double v) {
    return static_cast<std::int16_t>(std::clamp(std::round(v * 100.0), -32768.0, 32767.0));
  };
  return {cm(p.x - ref.x), cm(p.y - ref.y)};
}

}  // namespace

codec::MapemPayload build_mapem(const LaneGeometry& lane, const geo::GeoAnchor& anchor,
                                geom::Vec2 reference, std::uint16_t intersection_id) {
  codec::MapemPayload m;
  m.intersection_id = intersection_id;
  std::tie(m.latitude, m.longitude) = anchor.to_wgs84_e7(reference);
  codec::MapLane vehicle{1, codec::LaneType::Vehicle, kShuttleSignalGroup, {}};
  for (const auto& p : lane.lane.points()) vehicle.nodes.push_back(to_node(p, reference));
  codec::MapLane walk{2, codec::LaneType::Crosswalk, kCrosswalkSignalGroup, {}};
  for (const auto& p : lane.conflict_zone) walk.nodes.push_back(to_node(p, reference));
  if (vehicle.nodes.size() > 255 || walk.nodes.size() > 255) {
    throw std::invalid_argument("MAPEM lanes are limited to 255 nodes");
  }
  m.lanes = {vehicle, walk};
  return m;
}

std::optional<MapView> decode_mapem(const codec::MapemPayload& map, const geo::GeoAnchor& anchor) {
  const geom::Vec2 ref = anchor.to_enu_e7(map.latitude, map.longitude);
  const codec::MapLane* vehicle = nullptr;
  const codec::MapLane* walk = nullptr;
  for (const auto& l : map.lanes) {
    if (l.lane_type == codec::LaneType::Vehicle && !vehicle) vehicle = &l;
    if (l.lane_type == codec::LaneType::Crosswalk && !walk) walk = &l;
  }
  if (!vehicle || !walk || walk->nodes.size() < 3) return std::nullopt;
  auto to_enu = [&ref](const codec::LaneNode& n) { return geom::Vec2{ref.x + n.x_cm / 100.0, ref.y + n.y_cm / 100.0}; };
  MapView v;
  std::vector<geom::Vec2> pts;
  for (const auto& n : vehicle->nodes) pts.push_back(to_enu(n));
  v.vehicle_lane = geom::Polyline(std::move(pts));
  for (const auto& n : walk->nodes) v.conflict_zone.push_back(to_enu(n));
  v.vehicle_signal_group = vehicle->signal_group_id;
  return v;
}

RedTimeResult red_time_fraction(std::span<const PhaseLogEntry> log, SimTime start, SimTime end) {
  if (log.empty()) throw EmptyLog("phase log is empty");
  if (end <= start) throw std::invalid_argument("horizon must be positive");
  if (log.front().at > start) throw std::invalid_argument("phase log does not cover the horizon start");
  SimTime red = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const SimTime a = std::max(start, log[i].at);
    const SimTime b = std::min(end, i + 1 < log.size() ? log[i + 1].at : end);
    if (b <= a) continue;
    if (log[i].phase != Phase::PedGreen) red += b - a;
  }
  RedTimeResult r;
  r.red_seconds = to_seconds(red);
  r.horizon_seconds = to_seconds(end - start);
  r.fraction_immediate_cross = 1.0 - r.red_seconds / r.horizon_seconds;
  return r;
}

CrossingController::CrossingController(LaneGeometry lane, geo::GeoAnchor anchor, CrossingConfig config,
                                       std::uint16_t intersection_id, Mode mode)
    : lane_(std::move(lane)), anchor_(anchor), config_(config), intersection_id_(intersection_id) {
  state_.mode = mode;
  log_.push_back({0, Phase::PedGreen});
}

void CrossingController::on_cam(const codec::CamPayload& cam) { latest_cam_ = cam; }

std::optional<PhaseChange> CrossingController::step(SimTime now) {
  if (latest_cam_) {
    observation_ = observe(*latest_cam_, lane_, anchor_, config_);
    if (observation_->off_route) ++off_route_count_;
  }
  auto r = crossing::step(state_, now, observation_, config_);
  state_ = r.state;
  if (r.change) log_.push_back({r.change->at, r.change->to});
  return r.change;
}

}  // namespace v2xlab::crossing
