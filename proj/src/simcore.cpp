#include "v2xlab/simcore.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace v2xlab::sim {

namespace fs = std::filesystem;

namespace {

// Crosswalk pedestrians wait this far behind the curb so a group there stays clear of the lane.
constexpr double kCurbStandBack = 0.8;

constexpr double kStandstill = 0.05;
constexpr double kPedRadius = 0.25;

geom::Vec2 left_of(double heading) { return {-std::sin(heading), std::cos(heading)}; }

geom::Vec2 centroid(const geom::Polygon& poly) {
  geom::Vec2 c;
  for (auto p : poly) c = c + p;
  return poly.empty() ? c : c * (1.0 / static_cast<double>(poly.size()));
}

/// Piece of a polyline between two arc lengths, s0 < s1.
geom::Polyline sub_polyline(const geom::Polyline& line, double s0, double s1) {
  std::vector<geom::Vec2> pts{line.point_at(s0)};
  const auto& v = line.points();
  double s = 0.0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    s += geom::distance(v[i - 1], v[i]);
    if (s > s0 + 1e-6 && s < s1 - 1e-6) pts.push_back(v[i]);
  }
  pts.push_back(line.point_at(s1));
  return geom::Polyline(std::move(pts));
}

ArrivalDraw draw_arrival(const SpawnProcess& process, std::mt19937_64& rng, double vmin, double vmax) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ArrivalDraw d;
  d.compliant = u(rng) < process.compliance;
  d.speed = vmin + (vmax - vmin) * u(rng);
  d.lateral = u(rng);
  d.side = u(rng) < 0.5;
  return d;
}

const char* class_name(perception::ObjectClass c) {
  return c == perception::ObjectClass::Pedestrian ? "pedestrian" : "other";
}

std::string i2s(std::int64_t v) { return std::to_string(v); }

}  // namespace

const char* to_string(PedState s) {
  switch (s) {
    case PedState::Waiting: return "waiting";
    case PedState::Crossing: return "crossing";
    case PedState::AtStop: return "at_stop";
    case PedState::Done: return "done";
  }
  return "unknown";
}

std::vector<ArrivalDraw> spawn_pedestrians(const SpawnProcess& process, std::mt19937_64& rng, double tick_s,
                                           double speed_min, double speed_max) {
  std::vector<ArrivalDraw> out;
  if (process.rate < 0.0) throw std::invalid_argument("pedestrian rate must be non-negative");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double p = process.rate * tick_s;
  if (u(rng) < p) out.push_back(draw_arrival(process, rng, speed_min, speed_max));
  return out;
}

// ---------------------------------------------------------------------------
// Recorder

struct Simulation::Recorder {
  fs::path root;
  std::uint64_t epoch_ms = 0;
  data::MissionSegmenter segmenter;
  std::optional<data::TripRecord> trip;
  std::map<std::string, std::size_t> per_date;
  std::map<std::string, std::vector<std::vector<std::string>>> pending;
  std::optional<shuttle::TrajectorySource> planned_source;
  SimTime planned_at = 0;
  std::size_t written = 0;

  std::string ts(SimTime t) const { return data::fmt_ns(static_cast<SimTime>(epoch_ms) * kNanosPerMilli + t); }

  void add(std::string_view path, std::vector<std::string> row) { pending[std::string(path)].push_back(std::move(row)); }

  void flush_pending() {
    if (trip) {
      for (auto& [path, rows] : pending) {
        auto& table = trip->table(path);
        for (auto& r : rows) table.rows.push_back(std::move(r));
      }
    }
    pending.clear();
  }

  void close() {
    if (!trip) return;
    data::write_trip(root, *trip);
    ++written;
    trip.reset();
  }

  void on_cam(SimTime t, const codec::CamPayload& cam) {
    bool appended = false;
    for (const auto& ev : segmenter.feed(t, cam)) {
      if (ev.kind == data::SegmentEvent::Kind::Open) {
        const auto date = data::date_of(epoch_ms + static_cast<std::uint64_t>(t / kNanosPerMilli));
        trip = data::empty_trip(date, per_date[date]++);
      } else if (ev.reason == data::CloseReason::Completed) {
        flush_pending();
        appended = true;
        close();
      } else {
        close();
      }
    }
    if (!appended) flush_pending();
  }

  void finish(SimTime t) {
    flush_pending();
    if (segmenter.finish(t)) close();
  }
};

// ---------------------------------------------------------------------------
// Simulation

Simulation::Simulation(ScenarioConfig config, std::optional<fs::path> out_dir)
    : config_(std::move(config)), out_dir_(std::move(out_dir)) {
  config_.validate();
  anchor_ = geo::GeoAnchor{config_.anchor_lat, config_.anchor_lon};
  rng_.seed(config_.seed);
  bus_ = std::make_unique<net::NetBus>(config_.loss_model(), false);
  build_world();
  if (out_dir_) {
    recorder_ = std::make_unique<Recorder>();
    recorder_->root = *out_dir_ / "dataset";
    recorder_->epoch_ms = config_.epoch_ms;
    fs::create_directories(recorder_->root);
  }
  blocks_.resize(config_.pedestrians.scripted.size());
  log_.conflict_zone = config_.map.conflict_zone;
  log_.phase_log = crossing_->phase_log();
  log_.mode_log.push_back({0, config_.initial_mode});
}

Simulation::~Simulation() = default;

void Simulation::build_world() {
  const auto& map = config_.map;
  auto lane = crossing::LaneGeometry::make(map.lane, map.conflict_zone);
  const geom::Vec2 zc = centroid(map.conflict_zone);
  const double zs = map.lane.project(zc).s;
  const geom::Vec2 rsu = map.lane.point_at(zs) + left_of(map.lane.heading_at(zs)) * (map.curb_offset + 1.0);
  crossing_ = std::make_unique<crossing::CrossingController>(lane, anchor_, config_.intersection, kIntersectionId,
                                                             config_.initial_mode);

  shuttle::StationRegistry registry;
  bus_->add_station(kShuttleStation, net::StationRole::Shuttle, map.bus_stops[0].position);
  bus_->add_station(kCrossingStation, net::StationRole::RsuCrossing, rsu);
  for (int k = 0; k < data::kBusStops; ++k) {
    const auto& stop = map.bus_stops[k];
    const geom::Vec2 sensor = stop.position + left_of(stop.heading) * map.sensor_offset;
    const auto id = kBusStopStation0 + static_cast<std::uint32_t>(k);
    bus_->add_station(id, k == 0 ? net::StationRole::RsuBusStop0 : net::StationRole::RsuBusStop1, sensor);
    registry[id] = sensor;
    pipelines_.emplace_back(perception::PipelineConfig{}, sensor);
    const auto [lat, lon] = anchor_.to_wgs84_e7(sensor);
    stop_anchors_.push_back({sensor, lat, lon});

    // Shelter behind the platform.
    const geom::Vec2 dir = geom::unit_from_heading(stop.heading);
    const geom::Vec2 left = left_of(stop.heading);
    const double back = -(map.platform_far + 1.0);
    const double half = map.platform_half_length + 1.0;
    const std::vector<double> heights{0.2, 0.8, 1.4, 2.0, 2.6};
    auto rel = [&](double along, double lat_off) { return stop.position + dir * along + left * lat_off - sensor; };
    std::vector<perception::ScanPoint> bg;
    for (auto [a, b] : {std::pair{rel(-half, back), rel(half, back)},
                        std::pair{rel(-half, back), rel(-half, back + 1.2)},
                        std::pair{rel(half, back), rel(half, back + 1.2)}}) {
      auto w = perception::wall_points(a, b, 0.1, heights);
      bg.insert(bg.end(), w.begin(), w.end());
    }
    stop_background_.push_back(std::move(bg));
  }
  learning_.resize(data::kBusStops);
  shuttle_ = std::make_unique<shuttle::ShuttleAgent>(kShuttleStation, anchor_, config_.epoch_ms, registry,
                                                     config_.shuttle);
  shuttle_->reposition(map.bus_stops[0]);

  const double s0 = map.lane.project(map.bus_stops[0].position).s;
  const double s1 = map.lane.project(map.bus_stops[1].position).s;
  outbound_ = shuttle::RoutePlan::make(1, shuttle::Direction::Outbound, sub_polyline(map.lane, s0, s1), std::nullopt,
                                       config_.shuttle);

  // Return: turn around behind stop 1 clear of its platform, then follow the lane back.
  const double rejoin = s1 - map.turnaround_length;
  if (rejoin <= s0) throw ConfigError("turnaround does not fit between the bus stops");
  const geom::Pose turn_start = outbound_->goal;
  const geom::Pose turn_goal{map.lane.point_at(rejoin), geom::wrap_angle(map.lane.heading_at(rejoin) + std::numbers::pi)};
  std::vector<shuttle::Obstacle> platform;
  {
    const auto& stop = map.bus_stops[1];
    const double mid = -(map.platform_near + map.platform_far) / 2.0;
    for (double a = -map.platform_half_length; a <= map.platform_half_length + 1e-9; a += 1.0) {
      shuttle::Obstacle o;
      o.position = stop.position + geom::unit_from_heading(stop.heading) * a + left_of(stop.heading) * mid;
      o.radius = 0.75;
      platform.push_back(o);
    }
  }
  shuttle::PlannedPath turn;
  try {
    turn = shuttle::plan_path(turn_start, turn_goal, platform, config_.shuttle);
  } catch (const shuttle::NoPath& e) {
    throw ConfigError(std::string("no turnaround path: ") + e.what());
  }
  std::vector<geom::Vec2> pts;
  for (const auto& p : turn.poses) {
    if (pts.empty() || geom::distance(pts.back(), p.position) > 0.02) pts.push_back(p.position);
  }
  const geom::Polyline turn_line(pts);
  const double turn_len = turn_line.length();
  const auto lane_back = sub_polyline(map.lane, s0, rejoin).reversed();
  for (auto p : lane_back.points()) {
    if (geom::distance(pts.back(), p) > 0.02) pts.push_back(p);
  }
  return_ = shuttle::RoutePlan::make(1, shuttle::Direction::Return, geom::Polyline(std::move(pts)),
                                     std::pair{0.0, turn_len}, config_.shuttle);
}

const shuttle::RoutePlan& Simulation::route_template(shuttle::Direction d) const {
  return d == shuttle::Direction::Outbound ? *outbound_ : *return_;
}

std::size_t Simulation::trips_completed() const {
  return static_cast<std::size_t>(
      std::count_if(log_.trips.begin(), log_.trips.end(), [](const TripSummary& t) { return t.completed_at.has_value(); }));
}

bool Simulation::trip_active() const { return active_trip_.has_value(); }

bool Simulation::in_zone(geom::Vec2 p) const { return geom::point_in_polygon(p, config_.map.conflict_zone); }

net::NetBus::BroadcastResult Simulation::broadcast(std::uint32_t sender, codec::Payload payload) {
  auto msg = codec::make_message(sender, std::move(payload));
  auto res = bus_->broadcast(sender, msg, now_);
  output_.broadcasts.push_back({sender, res.sequence, std::move(msg)});
  return res;
}

void Simulation::set_intersection_mode(crossing::Mode mode) {
  crossing_->set_mode(mode);
  log_.mode_log.push_back({now_, mode});
}

std::string Simulation::dispatch_mission(shuttle::Direction direction) {
  if (active_trip_ || shuttle_->mission_active()) return "Busy: a trip is in progress";
  if (shuttle_->dwelling(now_)) return "Busy: shuttle is dwelling at a stop";
  if (tick_ < config_.warmup_ticks) return "Busy: infrastructure is still learning its background";
  start_trip({direction, crossing_->state().mode}, false);
  return {};
}

void Simulation::pause_shuttle() { shuttle_->pause(); }
void Simulation::resume_shuttle() { shuttle_->resume(); }

std::string Simulation::send_external_trajectory(shuttle::Trajectory trajectory) {
  return shuttle_->offer_external(std::move(trajectory), now_);
}

void Simulation::start_trip(const TripSpec& spec, bool scheduled) {
  (void)scheduled;
  const auto& tmpl = route_template(spec.direction);
  const auto& st = shuttle_->state();
  if (geom::distance(st.pose.position, tmpl.start.position) > 0.05 ||
      std::abs(geom::wrap_angle(st.pose.heading - tmpl.start.heading)) > 0.02) {
    // Manual repositioning between missions.
    shuttle_->set_driving_status(shuttle::DrivingStatus::Manual);
    shuttle_->reposition(tmpl.start);
    bus_->set_position(kShuttleStation, tmpl.start.position);
  }
  shuttle::RoutePlan route = tmpl;
  const std::size_t index = log_.trips.size();
  route.mission_id = static_cast<std::uint16_t>(index % 65535 + 1);
  if (crossing_->state().mode != spec.mode) set_intersection_mode(spec.mode);
  shuttle_->dispatch(route, now_);
  TripSummary s;
  s.index = index;
  s.mission_id = route.mission_id;
  s.direction = spec.direction;
  s.mode = spec.mode;
  s.dispatched_at = now_;
  log_.trips.push_back(s);
  active_trip_ = index;
  was_in_zone_ = in_zone(shuttle_->state().pose.position);
}

void Simulation::schedule_trips() {
  if (active_trip_) {
    const auto& tr = log_.trips[*active_trip_];
    if (!shuttle_->mission_active()) {
      active_trip_.reset();
    } else if (now_ - tr.dispatched_at > from_seconds(config_.max_trip_seconds)) {
      shuttle_->abort_mission();
      active_trip_.reset();
    }
  }
  if (!config_.auto_dispatch || active_trip_ || next_trip_ >= config_.trips.size()) return;
  if (tick_ < config_.warmup_ticks || shuttle_->dwelling(now_)) return;
  start_trip(config_.trips[next_trip_], true);
  ++next_trip_;
}

bool Simulation::finished() const {
  return config_.auto_dispatch && next_trip_ >= config_.trips.size() && !active_trip_;
}

// ---------------------------------------------------------------------------
// Pedestrians

void Simulation::release_blocker(const PedestrianAgent& p) {
  const auto& scripted = config_.pedestrians.scripted;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].ped != p.id) continue;
    blocks_[i].released = true;
    for (std::size_t j = i + 1; j < blocks_.size(); ++j) {
      if (scripted[j].trip == scripted[i].trip && scripted[j].after_previous && !blocks_[j].appear_at) {
        blocks_[j].appear_at = now_ + from_seconds(*scripted[j].after_previous);
        break;
      }
    }
  }
}

void Simulation::advance_pedestrians() {
  const double dt = to_seconds(config_.tick());
  const auto phase = crossing_->state().phase;
  const auto walk = crossing::crosswalk_state(phase);
  const auto& st = shuttle_->state();
  const auto& zone = config_.map.conflict_zone;
  const double d_zone = geom::distance_to_polygon(st.pose.position, zone);
  const bool heading_away =
      geom::dot(geom::unit_from_heading(st.pose.heading), centroid(zone) - st.pose.position) < 0.0;
  const double braking = st.speed * st.speed / (2.0 * config_.shuttle.comfort_decel);
  const bool triggered = d_zone <= config_.pedestrians.trigger_range &&
                         (heading_away || braking < d_zone - config_.shuttle.footprint_radius);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  for (auto& p : peds_) {
    p.velocity = {};
    switch (p.goal) {
      case PedGoal::Cross: {
        if (p.state == PedState::Waiting) {
          bool go = walk == codec::EventState::ProtectedMovementAllowed;
          if (!go && !p.compliant && walk == codec::EventState::StopAndRemain && triggered) {
            go = u(rng_) < config_.pedestrians.hazard;
          }
          if (go) p.state = PedState::Crossing;
        } else if (p.state == PedState::Crossing && p.compliant && !p.entered_zone &&
                   walk != codec::EventState::ProtectedMovementAllowed) {
          p.position = p.origin;
          p.state = PedState::Waiting;
        }
        if (p.state == PedState::Crossing) {
          const geom::Vec2 to = p.target - p.position;
          const double dist = geom::norm(to);
          const double step = p.speed * dt;
          if (dist <= step) {
            p.position = p.target;
            p.state = PedState::Done;
          } else {
            p.velocity = to * (p.speed / dist);
            p.position = p.position + to * (step / dist);
          }
          if (in_zone(p.position)) p.entered_zone = true;
        }
        break;
      }
      case PedGoal::Board: {
        const auto& stop = config_.map.bus_stops[p.stop];
        if (geom::distance(st.pose.position, stop.position) < 0.5 && shuttle_->door_status() != 0) {
          p.state = PedState::Done;
        }
        break;
      }
      case PedGoal::Block: {
        if (!p.release_at && st.speed < kStandstill && d_zone <= config_.pedestrians.trigger_range) {
          for (std::size_t i = 0; i < blocks_.size(); ++i) {
            if (blocks_[i].ped == p.id) p.release_at = now_ + from_seconds(config_.pedestrians.scripted[i].duration);
          }
        }
        if (p.release_at && now_ >= *p.release_at) {
          p.position = p.target;
          p.state = PedState::Done;
          release_blocker(p);
        }
        break;
      }
    }
  }
  const auto before = peds_.size();
  std::erase_if(peds_, [](const PedestrianAgent& p) { return p.state == PedState::Done; });
  log_.pedestrians_done += before - peds_.size();
}

void Simulation::spawn(SimTime t) {
  if (tick_ < config_.warmup_ticks) return;
  const auto& pc = config_.pedestrians;
  const auto& map = config_.map;
  const double dt = to_seconds(config_.tick());
  const geom::Vec2 zc = centroid(map.conflict_zone);
  const double zs = map.lane.project(zc).s;
  const double h = map.lane.heading_at(zs);
  const geom::Vec2 along = geom::unit_from_heading(h);
  const geom::Vec2 left = left_of(h);
  double lo = 1e9, hi = -1e9;
  for (auto v : map.conflict_zone) {
    lo = std::min(lo, geom::dot(v - zc, along));
    hi = std::max(hi, geom::dot(v - zc, along));
  }
  auto crosswalk_ped = [&](const ArrivalDraw& d) {
    PedestrianAgent p;
    p.id = next_ped_id_++;
    const double a = (lo + 0.3) + d.lateral * std::max(0.0, hi - lo - 0.6);
    const double side = d.side ? 1.0 : -1.0;
    const geom::Vec2 base = map.lane.point_at(zs) + along * a;
    p.origin = base + left * (side * (map.curb_offset + kCurbStandBack));
    p.target = base - left * (side * (map.curb_offset + kCurbStandBack));
    p.position = p.origin;
    p.goal = PedGoal::Cross;
    p.compliant = d.compliant;
    p.speed = d.speed;
    p.spawned_at = t;
    peds_.push_back(p);
    ++log_.pedestrians_spawned;
  };

  for (const auto& proc : pc.processes) {
    if (proc.kind == SpawnKind::OnRed) continue;
    for (const auto& d : spawn_pedestrians(proc, rng_, dt, pc.speed_min, pc.speed_max)) {
      if (proc.kind == SpawnKind::Crosswalk) {
        crosswalk_ped(d);
      } else {
        const auto& stop = map.bus_stops[proc.stop];
        PedestrianAgent p;
        p.id = next_ped_id_++;
        const double a = (2.0 * d.lateral - 1.0) * map.platform_half_length * 0.8;
        p.origin = stop.position + geom::unit_from_heading(stop.heading) * a +
                   left_of(stop.heading) * (-(map.platform_near + map.platform_far) / 2.0);
        p.position = p.target = p.origin;
        p.goal = PedGoal::Board;
        p.state = PedState::AtStop;
        p.compliant = d.compliant;
        p.speed = d.speed;
        p.stop = proc.stop;
        p.spawned_at = t;
        peds_.push_back(p);
        ++log_.pedestrians_spawned;
      }
    }
  }
  if (red_since_ && *red_since_ + config_.tick() == t) {
    for (const auto& proc : pc.processes) {
      if (proc.kind == SpawnKind::OnRed) crosswalk_ped(draw_arrival(proc, rng_, pc.speed_min, pc.speed_max));
    }
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    if (!b.appear_at || b.ped || *b.appear_at > t) continue;
    const auto& sb = pc.scripted[i];
    const double s = map.lane.project(zc + along * (sb.x - zc.x)).s;
    PedestrianAgent p;
    p.id = next_ped_id_++;
    p.position = map.lane.point_at(s) + left_of(map.lane.heading_at(s)) * 1.4;
    p.origin = p.position;
    p.target = map.lane.point_at(s) + left_of(map.lane.heading_at(s)) * (map.curb_offset + 0.2);
    p.goal = PedGoal::Block;
    p.state = PedState::Crossing;
    p.compliant = false;
    p.speed = 0.0;
    p.spawned_at = t;
    p.entered_zone = true;
    b.ped = p.id;
    peds_.push_back(p);
    ++log_.pedestrians_spawned;
  }
}

// ---------------------------------------------------------------------------
// Stations

perception::Scan Simulation::make_scan(int stop) const {
  perception::Scan scan;
  scan.sensor_id = kBusStopStation0 + static_cast<std::uint32_t>(stop);
  scan.sim_time = now_;
  scan.points = stop_background_[stop];
  const geom::Vec2 sensor = stop_anchors_[stop].reference_enu;
  const double reach = config_.sensor_range + 2.0;
  for (const auto& p : peds_) {
    if (geom::distance(p.position, sensor) > reach) continue;
    auto pts = perception::pedestrian_points(p.position - sensor, kPedRadius, 1.7, 4, 6, 0.1 * (p.id % 7));
    scan.points.insert(scan.points.end(), pts.begin(), pts.end());
  }
  if (tick_ >= config_.warmup_ticks) {
    const auto pos = shuttle_->state().pose.position;
    if (geom::distance(pos, sensor) <= reach) {
      auto pts = perception::vehicle_points(pos - sensor, config_.shuttle.footprint_radius, 2.4);
      scan.points.insert(scan.points.end(), pts.begin(), pts.end());
    }
  }
  perception::clip_to_sensor(scan.points, config_.sensor_range, 3.0);
  return scan;
}

void Simulation::run_bus_stops() {
  const auto cpm_every = static_cast<std::uint64_t>(config_.emission.cpm_ms / config_.tick_ms);
  for (int k = 0; k < data::kBusStops; ++k) {
    auto scan = make_scan(k);
    auto& pipe = pipelines_[k];
    if (tick_ < config_.warmup_ticks) {
      learning_[k].push_back(std::move(scan));
      output_.stop_pedestrian_counts.push_back(0);
      output_.stop_detections.emplace_back();
      continue;
    }
    if (!pipe.ready()) {
      pipe.learn(learning_[k]);
      learning_[k].clear();
    }
    const auto& tracks = pipe.process(scan);
    output_.stop_pedestrian_counts.push_back(pipe.pedestrian_count());
    output_.stop_detections.push_back(pipe.last_detections());
    if (recorder_) {
      const auto ts = recorder_->ts(now_);
      const auto& dets = pipe.last_detections();
      for (std::size_t i = 0; i < dets.size(); ++i) {
        recorder_->add(data::file::bus_stop_boxes(k), {ts, i2s(static_cast<std::int64_t>(i)), data::fmt_m(dets[i].position.x),
                                                      data::fmt_m(dets[i].position.y), data::fmt_m(dets[i].radius),
                                                      class_name(dets[i].cls)});
      }
      for (const auto& t : tracks) {
        recorder_->add(data::file::bus_stop_tracks(k),
                       {ts, i2s(t.track_id), data::fmt_m(t.position.x), data::fmt_m(t.position.y),
                        data::fmt_m(t.velocity.x), data::fmt_m(t.velocity.y), data::fmt_m(t.footprint_radius),
                        class_name(t.cls), i2s(t.confidence), perception::to_string(t.status)});
      }
    }
    if (tick_ % cpm_every != 0) continue;
    const auto confirmed = pipe.confirmed_tracks();
    const std::uint64_t ref_ms = config_.epoch_ms + static_cast<std::uint64_t>(now_ / kNanosPerMilli);
    auto emission = perception::emit_cpm(stop_anchors_[k], confirmed, ref_ms);
    const auto sender = kBusStopStation0 + static_cast<std::uint32_t>(k);
    const auto res = broadcast(sender, emission.payload);
    if (recorder_) {
      std::string rx;
      for (const auto& d : res.deliveries) {
        if (d.receiver == kShuttleStation && d.delivered) rx = recorder_->ts(d.deliver_at);
      }
      const auto ts = recorder_->ts(now_);
      const auto& cpm = emission.payload;
      const auto n = cpm.objects.size();
      std::vector<std::string> head{ts, i2s(static_cast<std::int64_t>(res.sequence)), i2s(sender),
                                    std::to_string(cpm.reference_time), i2s(cpm.latitude), i2s(cpm.longitude),
                                    i2s(static_cast<std::int64_t>(n))};
      if (n == 0) {
        auto row = head;
        row.insert(row.end(), {"", "", "", "", "", "", "", "", "", rx});
        recorder_->add(data::file::bus_stop_cpm(k), std::move(row));
      }
      for (std::size_t i = 0; i < n; ++i) {
        const auto& o = cpm.objects[i];
        auto row = head;
        row.insert(row.end(), {i2s(static_cast<std::int64_t>(i)), i2s(o.object_id), i2s(o.dx), i2s(o.dy), i2s(o.vx),
                               i2s(o.vy), i2s(o.footprint_radius), i2s(static_cast<int>(o.classification)),
                               i2s(o.confidence), rx});
        recorder_->add(data::file::bus_stop_cpm(k), std::move(row));
      }
    }
  }
}

void Simulation::run_crossing() {
  for (const auto& rx : bus_->poll(kCrossingStation, now_)) {
    if (const auto* cam = std::get_if<codec::CamPayload>(&rx.message->payload)) crossing_->on_cam(*cam);
  }
  const auto spatem_every = static_cast<std::uint64_t>(config_.emission.spatem_ms / config_.tick_ms);
  const auto mapem_every = static_cast<std::uint64_t>(config_.emission.mapem_ms / config_.tick_ms);
  const auto sp = crossing_->spatem(now_);
  log_.spatem.push_back(sp);
  if (tick_ % spatem_every == 0) {
    const auto res = broadcast(kCrossingStation, sp);
    if (recorder_) {
      const auto ts = recorder_->ts(now_);
      for (const auto& m : sp.movements) {
        recorder_->add(data::file::kSpatem,
                       {ts, i2s(static_cast<std::int64_t>(res.sequence)), i2s(sp.intersection_id), i2s(sp.revision),
                        i2s(m.signal_group_id), i2s(static_cast<int>(m.event_state)), i2s(m.time_to_change),
                        crossing::to_string(crossing_->state().mode)});
      }
    }
  }
  if (tick_ % mapem_every == 0) {
    const auto ref = bus_->station(kCrossingStation).position;
    auto map = crossing::build_mapem(crossing_->lane(), anchor_, ref, kIntersectionId);
    const auto res = broadcast(kCrossingStation, map);
    if (recorder_) {
      const auto ts = recorder_->ts(now_);
      for (const auto& lane : map.lanes) {
        for (std::size_t i = 0; i < lane.nodes.size(); ++i) {
          recorder_->add(data::file::kMapem,
                         {ts, i2s(static_cast<std::int64_t>(res.sequence)), i2s(map.intersection_id), i2s(map.latitude),
                          i2s(map.longitude), i2s(lane.lane_id), i2s(static_cast<int>(lane.lane_type)),
                          i2s(lane.signal_group_id), i2s(static_cast<std::int64_t>(i)), i2s(lane.nodes[i].x_cm),
                          i2s(lane.nodes[i].y_cm)});
        }
      }
    }
  }
  const auto change = crossing_->step(now_);
  output_.crossing_mode = crossing_->state().mode;
  if (change) {
    log_.phase_log.push_back({change->at, change->to});
    if (change->to == crossing::Phase::PedRed) {
      red_since_ = now_;
      if (active_trip_) {
        const auto& scripted = config_.pedestrians.scripted;
        for (std::size_t i = 0; i < scripted.size(); ++i) {
          if (scripted[i].trip != *active_trip_ || blocks_[i].appear_at) continue;
          bool chained = false;
          if (scripted[i].after_previous) {
            for (std::size_t j = 0; j < i; ++j) chained = chained || scripted[j].trip == scripted[i].trip;
          }
          if (!chained) blocks_[i].appear_at = now_ + from_seconds(scripted[i].after_red);
        }
      }
    }
  }
  last_phase_ = crossing_->state().phase;
}

std::vector<shuttle::OnboardDetection> Simulation::onboard_detections() const {
  std::vector<shuttle::OnboardDetection> out;
  const auto& st = shuttle_->state();
  const geom::Vec2 fwd = geom::unit_from_heading(st.pose.heading);
  for (const auto& p : peds_) {
    const geom::Vec2 rel = p.position - st.pose.position;
    if (geom::norm(rel) > config_.onboard_range || geom::dot(rel, fwd) <= 0.0) continue;
    out.push_back({p.position, p.velocity, kPedRadius});
  }
  return out;
}

void Simulation::run_shuttle() {
  shuttle::TickInputs in;
  for (const auto& rx : bus_->poll(kShuttleStation, now_)) {
    in.received.push_back(*rx.message);
    in.received_from.push_back(rx.sender);
  }
  in.onboard = onboard_detections();
  auto rep = shuttle_->tick(now_, in);
  const auto& st = shuttle_->state();
  bus_->set_position(kShuttleStation, st.pose.position);

  const auto cam_every = static_cast<std::uint64_t>(config_.emission.cam_ms / config_.tick_ms);
  const bool send_cam = tick_ % cam_every == 0;
  std::uint64_t cam_seq = 0;
  if (send_cam) cam_seq = broadcast(kShuttleStation, rep.cam).sequence;

  const bool inz = in_zone(st.pose.position);
  if (inz && !was_in_zone_ && active_trip_) ++log_.trips[*active_trip_].zone_entries;
  was_in_zone_ = inz;
  if (inz && crossing_->state().phase == crossing::Phase::PedGreen) ++log_.shuttle_in_zone_on_green;
  if (rep.mission_completed && active_trip_) {
    log_.trips[*active_trip_].completed_at = now_;
    output_.mission_completed = true;
  }

  if (recorder_) {
    auto& r = *recorder_;
    const auto ts = r.ts(now_);
    r.add(data::file::kPose, {ts, data::fmt_m(st.pose.position.x), data::fmt_m(st.pose.position.y),
                              data::fmt_rad(geom::wrap_angle(st.pose.heading))});
    const auto& route = shuttle_->route();
    std::string dir, from, to;
    if (route && rep.cam.mission_id != 0) {
      const bool out = route->direction == shuttle::Direction::Outbound;
      dir = shuttle::to_string(route->direction);
      from = out ? "0" : "1";
      to = out ? "1" : "0";
    }
    r.add(data::file::kCurrentMission, {ts, i2s(rep.cam.mission_id), dir, from, to});
    const auto v = geom::unit_from_heading(st.pose.heading) * st.speed;
    r.add(data::file::kVelocity, {ts, data::fmt_m(st.speed), data::fmt_m(v.x), data::fmt_m(v.y)});
    r.add(data::file::kStateOfCharge, {ts, csv::fixed(shuttle_->state_of_charge(), 3)});
    const auto doors = shuttle_->door_status();
    r.add(data::file::kDoorStatus, {ts, i2s(doors), (doors & codec::door::kFrontOpen) ? "1" : "0",
                                    (doors & codec::door::kRearOpen) ? "1" : "0"});
    r.add(data::file::kMissionProgress, {ts, i2s(rep.cam.mission_id), i2s(rep.cam.mission_progress)});
    r.add(data::file::kDrivingStatus, {ts, shuttle::to_string(shuttle_->driving_status())});
    r.add(data::file::kSteeringAngle, {ts, data::fmt_rad(rep.steering_angle)});
    if (const auto& traj = shuttle_->active_trajectory(); traj && rep.planner) {
      const bool due = config_.record_planned_every_tick || !r.planned_source || *r.planned_source != traj->source ||
                       now_ - r.planned_at >= kNanosPerSecond;
      if (due) {
        r.planned_source = traj->source;
        r.planned_at = now_;
        for (std::size_t i = 0; i < traj->samples.size(); ++i) {
          const auto& s = traj->samples[i];
          r.add(data::file::kPlannedTrajectory,
                {ts, shuttle::to_string(traj->source), i2s(static_cast<std::int64_t>(i)), csv::fixed(s.t, 3),
                 data::fmt_m(s.x), data::fmt_m(s.y), data::fmt_rad(s.heading), data::fmt_m(s.speed)});
        }
      }
    }
    if (send_cam) {
      const auto& c = rep.cam;
      r.add(data::file::kCam, {ts, i2s(static_cast<std::int64_t>(cam_seq)), i2s(kShuttleStation),
                               i2s(c.generation_delta_time), i2s(c.latitude), i2s(c.longitude), i2s(c.heading),
                               i2s(c.speed), i2s(c.door_status), i2s(static_cast<int>(c.indicator_status)),
                               i2s(c.mission_id), i2s(c.mission_progress)});
    }
  }
  output_.shuttle = std::move(rep);
  output_.vehicle = TickOutput::VehicleStatus{shuttle_->state_of_charge(), shuttle_->driving_status(), shuttle_->paused()};
}

void Simulation::record_tick() {
  TraceTick tt;
  tt.t = now_;
  tt.trip = active_trip_ ? static_cast<int>(*active_trip_) : -1;
  const auto& st = shuttle_->state();
  tt.shuttle_pose = st.pose;
  tt.shuttle_speed = st.speed;
  tt.shuttle_in_zone = in_zone(st.pose.position);
  tt.shuttle_rendered = tick_ >= config_.warmup_ticks;
  tt.phase = crossing_->state().phase;
  tt.mode = crossing_->state().mode;
  for (const auto& p : peds_) tt.pedestrians.push_back({p.id, p.position, p.state, p.compliant, in_zone(p.position)});
  log_.trace.push_back(std::move(tt));
  if (recorder_ && output_.shuttle) recorder_->on_cam(now_, output_.shuttle->cam);
}

void Simulation::step() {
  if (finalized_) throw std::logic_error("simulation already finalized");
  if (hook_) hook_(*this);
  output_ = TickOutput{};
  output_.t = now_;
  output_.tick = tick_;
  schedule_trips();
  advance_pedestrians();
  spawn(now_);
  run_bus_stops();
  run_crossing();
  run_shuttle();
  record_tick();
  now_ += config_.tick();
  ++tick_;
}

const RunLog& Simulation::run() {
  if (!config_.auto_dispatch) throw std::logic_error("run() needs auto_dispatch; step the simulation instead");
  while (!finished()) step();
  finalize();
  return log_;
}

void Simulation::finalize() {
  if (finalized_) return;
  finalized_ = true;
  std::uint64_t digest = 1469598103934665603ull;
  for (auto id : bus_->station_ids()) {
    digest ^= bus_->log_digest(id);
    digest *= 1099511628211ull;
  }
  log_.net_digest = digest;
  if (recorder_) recorder_->finish(now_);
  if (out_dir_) write_world_trace(*out_dir_ / "world_trace.csv", log_);
}

// ---------------------------------------------------------------------------
// World trace

namespace {

const std::vector<std::string> kTraceHeader{"sim_time_ns", "trip", "entity", "id",    "x_m",  "y_m",
                                            "heading_rad", "speed_mps", "state", "in_zone", "flag"};

PedState parse_ped_state(const std::string& s) {
  for (auto st : {PedState::Waiting, PedState::Crossing, PedState::AtStop, PedState::Done}) {
    if (s == to_string(st)) return st;
  }
  throw csv::ParseError("unknown pedestrian state '" + s + "'");
}

}  // namespace

void write_world_trace(const fs::path& path, const RunLog& log) {
  csv::Table t;
  t.header = kTraceHeader;
  for (std::size_t i = 0; i < log.conflict_zone.size(); ++i) {
    const auto v = log.conflict_zone[i];
    t.rows.push_back({"0", "-1", "zone", std::to_string(i), data::fmt_m(v.x), data::fmt_m(v.y), "", "", "", "", ""});
  }
  std::multimap<SimTime, const TripSummary*> starts, ends;
  for (const auto& tr : log.trips) {
    starts.emplace(tr.dispatched_at, &tr);
    if (tr.completed_at) ends.emplace(*tr.completed_at, &tr);
  }
  auto trip_row = [&](const TripSummary& tr, SimTime at, bool start) {
    t.rows.push_back({data::fmt_ns(at), std::to_string(tr.index), start ? "trip_start" : "trip_end",
                      std::to_string(tr.mission_id), "", "", "", "",
                      start ? shuttle::to_string(tr.direction) : "completed", std::to_string(tr.zone_entries),
                      crossing::to_string(tr.mode)});
  };
  auto s_it = starts.begin();
  auto e_it = ends.begin();
  for (const auto& tick : log.trace) {
    for (; s_it != starts.end() && s_it->first <= tick.t; ++s_it) trip_row(*s_it->second, s_it->first, true);
    const auto ts = data::fmt_ns(tick.t);
    const auto trip = std::to_string(tick.trip);
    t.rows.push_back({ts, trip, "crossing", std::to_string(kCrossingStation), "", "", "", "",
                      crossing::to_string(tick.phase), "", crossing::to_string(tick.mode)});
    t.rows.push_back({ts, trip, "shuttle", std::to_string(kShuttleStation), data::fmt_m(tick.shuttle_pose.position.x),
                      data::fmt_m(tick.shuttle_pose.position.y), data::fmt_rad(tick.shuttle_pose.heading),
                      data::fmt_m(tick.shuttle_speed), "", tick.shuttle_in_zone ? "1" : "0",
                      tick.shuttle_rendered ? "1" : "0"});
    for (const auto& p : tick.pedestrians) {
      t.rows.push_back({ts, trip, "pedestrian", std::to_string(p.id), data::fmt_m(p.position.x),
                        data::fmt_m(p.position.y), "", "", to_string(p.state), p.in_zone ? "1" : "0",
                        p.compliant ? "1" : "0"});
    }
    for (; e_it != ends.end() && e_it->first <= tick.t; ++e_it) trip_row(*e_it->second, e_it->first, false);
  }
  csv::write_file(path, t);
}

RunLog read_world_trace(const fs::path& path) {
  const auto table = csv::read_file(path);
  if (table.header != kTraceHeader) throw data::SchemaError(path.string() + ": not a world trace");
  RunLog log;
  std::map<std::size_t, TripSummary> trips;
  for (const auto& r : table.rows) {
    const SimTime t = csv::to_int(r[0]);
    const int trip = static_cast<int>(csv::to_int(r[1]));
    const auto& entity = r[2];
    if (entity == "zone") {
      log.conflict_zone.push_back({csv::to_double(r[4]), csv::to_double(r[5])});
    } else if (entity == "trip_start" || entity == "trip_end") {
      auto& s = trips[static_cast<std::size_t>(trip)];
      s.index = static_cast<std::size_t>(trip);
      s.mission_id = static_cast<std::uint16_t>(csv::to_int(r[3]));
      s.zone_entries = static_cast<std::size_t>(csv::to_int(r[9]));
      s.mode = crossing::parse_mode(r[10]);
      if (entity == "trip_start") {
        s.dispatched_at = t;
        s.direction = shuttle::parse_direction(r[8]);
      } else {
        s.completed_at = t;
      }
    } else if (entity == "crossing") {
      TraceTick tick;
      tick.t = t;
      tick.trip = trip;
      tick.phase = crossing::parse_phase(r[8]);
      tick.mode = crossing::parse_mode(r[10]);
      if (log.phase_log.empty() || log.phase_log.back().phase != tick.phase) log.phase_log.push_back({t, tick.phase});
      if (log.mode_log.empty() || log.mode_log.back().second != tick.mode) log.mode_log.push_back({t, tick.mode});
      log.trace.push_back(std::move(tick));
    } else if (entity == "shuttle") {
      if (log.trace.empty() || log.trace.back().t != t) throw csv::ParseError("shuttle row without crossing row");
      auto& tick = log.trace.back();
      tick.shuttle_pose = {{csv::to_double(r[4]), csv::to_double(r[5])}, csv::to_double(r[6])};
      tick.shuttle_speed = csv::to_double(r[7]);
      tick.shuttle_in_zone = r[9] == "1";
      tick.shuttle_rendered = r[10] == "1";
    } else if (entity == "pedestrian") {
      if (log.trace.empty() || log.trace.back().t != t) throw csv::ParseError("pedestrian row without crossing row");
      log.trace.back().pedestrians.push_back({static_cast<std::uint32_t>(csv::to_int(r[3])),
                                              {csv::to_double(r[4]), csv::to_double(r[5])},
                                              parse_ped_state(r[8]), r[10] == "1", r[9] == "1"});
    } else {
      throw csv::ParseError("unknown trace entity '" + entity + "'");
    }
  }
  for (auto& [_, s] : trips) log.trips.push_back(s);
  return log;
}

double measure_stop_delay(const RunLog& log, std::size_t trip) {
  if (trip >= log.trips.size() || !log.trips[trip].completed_at) {
    throw IncompleteTrip("trip " + std::to_string(trip) + " did not complete");
  }
  const geom::Vec2 zc = centroid(log.conflict_zone);
  SimTime total = 0;
  for (std::size_t i = 0; i < log.trace.size(); ++i) {
    const auto& t = log.trace[i];
    if (t.trip != static_cast<int>(trip)) continue;
    if (t.shuttle_speed >= kStandstill || t.phase != crossing::Phase::PedRed || t.shuttle_in_zone) continue;
    const bool occupied = std::any_of(t.pedestrians.begin(), t.pedestrians.end(),
                                      [](const PedSnapshot& p) { return p.in_zone; });
    if (!occupied) continue;
    if (geom::dot(geom::unit_from_heading(t.shuttle_pose.heading), zc - t.shuttle_pose.position) <= 0.0) continue;
    SimTime dt = 0;
    if (i + 1 < log.trace.size()) {
      dt = log.trace[i + 1].t - t.t;
    } else if (i > 0) {
      dt = t.t - log.trace[i - 1].t;
    }
    total += dt;
  }
  return to_seconds(total);
}

}  // namespace v2xlab::sim
