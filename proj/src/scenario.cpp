#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

#include "v2xlab/simcore.hpp"

namespace v2xlab::sim {

const char* to_string(SpawnKind k) {
  switch (k) {
    case SpawnKind::Crosswalk: return "crosswalk";
    case SpawnKind::BusStop: return "bus_stop";
    case SpawnKind::OnRed: return "on_red";
  }
  return "unknown";
}

namespace {

SpawnKind parse_spawn_kind(const std::string& s) {
  if (s == "crosswalk") return SpawnKind::Crosswalk;
  if (s == "bus_stop") return SpawnKind::BusStop;
  if (s == "on_red") return SpawnKind::OnRed;
  throw ConfigError("unknown pedestrian process kind '" + s + "'");
}

net::ZoneMode parse_zone_mode(const std::string& s) {
  if (s == "sender_in") return net::ZoneMode::SenderIn;
  if (s == "receiver_in") return net::ZoneMode::ReceiverIn;
  if (s == "segment_crosses") return net::ZoneMode::SegmentCrosses;
  throw ConfigError("unknown loss zone mode '" + s + "'");
}

const char* zone_mode_name(net::ZoneMode m) {
  switch (m) {
    case net::ZoneMode::SenderIn: return "sender_in";
    case net::ZoneMode::ReceiverIn: return "receiver_in";
    case net::ZoneMode::SegmentCrosses: return "segment_crosses";
  }
  return "segment_crosses";
}

/// Walks a mapping and rejects keys nobody asked for.
class Section {
 public:
  Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_.IsMap()) throw ConfigError(path_ + " must be a mapping");
  }
  ~Section() noexcept(false) {
    if (!node_ || std::uncaught_exceptions() > 0) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ConfigError("unknown key '" + key + "' in " + path_);
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const YAML::Node& n = node_;
    if (!n || !n[key]) return;
    try {
      out = n[key].template as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type");
    }
  }

  // Missing keys come back as falsy nodes.
  YAML::Node child(const char* key) {
    seen_.insert(key);
    static const YAML::Node empty(YAML::NodeType::Map);
    if (!node_) return empty[key];
    const YAML::Node& n = node_;
    return n[key];
  }

  const std::string& path() const { return path_; }

 private:
  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

geom::Vec2 parse_point(const YAML::Node& n, const std::string& where) {
  if (!n.IsSequence() || n.size() != 2) throw ConfigError(where + ": points are [x, y] pairs");
  return {n[0].as<double>(), n[1].as<double>()};
}

std::vector<geom::Vec2> parse_points(const YAML::Node& n, const std::string& where) {
  if (!n.IsSequence()) throw ConfigError(where + " must be a list of points");
  std::vector<geom::Vec2> pts;
  for (const auto& p : n) pts.push_back(parse_point(p, where));
  return pts;
}

std::vector<TripSpec> default_cycle() {
  using shuttle::Direction;
  using crossing::Mode;
  return {{Direction::Outbound, Mode::ShuttlePriority},
          {Direction::Return, Mode::ShuttlePriority},
          {Direction::Outbound, Mode::PedestrianPriority},
          {Direction::Return, Mode::PedestrianPriority}};
}

}  // namespace

ScenarioConfig parse_scenario(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("scenario is not valid YAML: ") + e.what());
  }
  if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  ScenarioConfig c;
  {
    Section s(root, "scenario");
    s.get("name", c.name);
    s.get("seed", c.seed);
    s.get("tick_ms", c.tick_ms);
    s.get("epoch_ms", c.epoch_ms);
    s.get("warmup_ticks", c.warmup_ticks);
    s.get("max_trip_seconds", c.max_trip_seconds);
    s.get("sensor_range", c.sensor_range);
    s.get("onboard_range", c.onboard_range);
    s.get("record_planned_every_tick", c.record_planned_every_tick);
    {
      Section a(s.child("anchor"), "anchor");
      a.get("lat", c.anchor_lat);
      a.get("lon", c.anchor_lon);
    }
    {
      Section m(s.child("map"), "map");
      if (auto lane = m.child("lane")) c.map.lane = geom::Polyline(parse_points(lane, "map.lane"));
      if (auto zone = m.child("conflict_zone")) c.map.conflict_zone = parse_points(zone, "map.conflict_zone");
      if (auto stops = m.child("bus_stops")) {
        if (!stops.IsSequence()) throw ConfigError("map.bus_stops must be a list");
        c.map.bus_stops.clear();
        for (const auto& st : stops) {
          Section b(st, "map.bus_stops[]");
          std::vector<double> pos{0.0, 0.0};
          double heading_deg = 0.0;
          b.get("position", pos);
          b.get("heading_deg", heading_deg);
          if (pos.size() != 2) throw ConfigError("map.bus_stops[].position must be [x, y]");
          c.map.bus_stops.push_back({{pos[0], pos[1]}, heading_deg * std::numbers::pi / 180.0});
        }
      }
      m.get("curb_offset", c.map.curb_offset);
      m.get("turnaround_length", c.map.turnaround_length);
      m.get("sensor_offset", c.map.sensor_offset);
      m.get("platform_near", c.map.platform_near);
      m.get("platform_far", c.map.platform_far);
      m.get("platform_half_length", c.map.platform_half_length);
      if (auto obs = m.child("obstructions")) {
        if (!obs.IsSequence()) throw ConfigError("map.obstructions must be a list");
        for (const auto& o : obs) {
          Section os(o, "map.obstructions[]");
          Obstruction ob;
          os.get("name", ob.name);
          ob.polygon = parse_points(os.child("polygon"), "map.obstructions[].polygon");
          c.map.obstructions.push_back(std::move(ob));
        }
      }
    }
    {
      Section n(s.child("network"), "network");
      n.get("base_loss", c.network.base_loss);
      n.get("latency_mean_ms", c.network.latency_mean_ms);
      n.get("latency_jitter_ms", c.network.latency_jitter_ms);
      if (auto zones = n.child("zones")) {
        if (!zones.IsSequence()) throw ConfigError("network.zones must be a list");
        for (const auto& z : zones) {
          Section zs(z, "network.zones[]");
          ZoneRef ref;
          std::string mode = "segment_crosses";
          zs.get("obstruction", ref.obstruction);
          zs.get("extra_loss", ref.extra_loss);
          zs.get("mode", mode);
          ref.mode = parse_zone_mode(mode);
          c.network.zones.push_back(ref);
        }
      }
    }
    {
      Section i(s.child("intersection"), "intersection");
      i.get("t_near", c.intersection.t_near);
      i.get("t_far", c.intersection.t_far);
      i.get("t_clear", c.intersection.t_clear);
      i.get("hold_window", c.intersection.hold_window);
      i.get("exit_margin", c.intersection.exit_margin);
      i.get("v_floor", c.intersection.v_floor);
      i.get("off_route_distance", c.intersection.off_route_distance);
      std::string mode = crossing::to_string(c.initial_mode);
      i.get("initial_mode", mode);
      try {
        c.initial_mode = crossing::parse_mode(mode);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
    {
      Section e(s.child("emission"), "emission");
      e.get("cam_ms", c.emission.cam_ms);
      e.get("cpm_ms", c.emission.cpm_ms);
      e.get("spatem_ms", c.emission.spatem_ms);
      e.get("mapem_ms", c.emission.mapem_ms);
    }
    {
      Section sh(s.child("shuttle"), "shuttle");
      auto& k = c.shuttle;
      sh.get("v_max", k.v_max);
      sh.get("accel", k.accel);
      sh.get("comfort_decel", k.comfort_decel);
      sh.get("emergency_decel", k.emergency_decel);
      sh.get("lateral_accel", k.lateral_accel);
      sh.get("footprint_radius", k.footprint_radius);
      sh.get("r_min", k.r_min);
      sh.get("docking_speed", k.docking_speed);
      sh.get("docking_range", k.docking_range);
      sh.get("restart_hold", k.restart_hold);
      sh.get("dwell", k.dwell);
      sh.get("soc_start", k.soc_start);
      sh.get("soc_per_km", k.soc_per_km);
      sh.get("max_compute", k.max_compute);
    }
    {
      Section p(s.child("pedestrians"), "pedestrians");
      auto& pc = c.pedestrians;
      std::vector<double> speed{pc.speed_min, pc.speed_max};
      p.get("walk_speed", speed);
      if (speed.size() != 2) throw ConfigError("pedestrians.walk_speed must be [min, max]");
      pc.speed_min = speed[0];
      pc.speed_max = speed[1];
      p.get("hazard", pc.hazard);
      p.get("trigger_range", pc.trigger_range);
      if (auto procs = p.child("processes")) {
        if (!procs.IsSequence()) throw ConfigError("pedestrians.processes must be a list");
        for (const auto& pr : procs) {
          Section ps(pr, "pedestrians.processes[]");
          SpawnProcess sp;
          std::string kind = "crosswalk";
          ps.get("kind", kind);
          sp.kind = parse_spawn_kind(kind);
          ps.get("rate", sp.rate);
          ps.get("compliance", sp.compliance);
          ps.get("stop", sp.stop);
          pc.processes.push_back(sp);
        }
      }
      if (auto scr = p.child("scripted")) {
        if (!scr.IsSequence()) throw ConfigError("pedestrians.scripted must be a list");
        for (const auto& b : scr) {
          Section bs(b, "pedestrians.scripted[]");
          ScriptedBlock sb;
          bs.get("trip", sb.trip);
          bs.get("after_red_s", sb.after_red);
          double prev = -1.0;
          bs.get("after_previous_s", prev);
          if (prev >= 0.0) sb.after_previous = prev;
          bs.get("block_s", sb.duration);
          bs.get("x", sb.x);
          pc.scripted.push_back(sb);
        }
      }
    }
    {
      Section t(s.child("trips"), "trips");
      std::size_t count = 4;
      t.get("count", count);
      t.get("auto_dispatch", c.auto_dispatch);
      std::vector<TripSpec> cycle = default_cycle();
      if (auto cyc = t.child("cycle")) {
        if (!cyc.IsSequence() || cyc.size() == 0) throw ConfigError("trips.cycle must be a non-empty list");
        cycle.clear();
        for (const auto& e : cyc) {
          Section cs(e, "trips.cycle[]");
          std::string dir = "outbound", mode = "SHUTTLE_PRIORITY";
          cs.get("direction", dir);
          cs.get("mode", mode);
          try {
            cycle.push_back({shuttle::parse_direction(dir), crossing::parse_mode(mode)});
          } catch (const std::invalid_argument& ex) {
            throw ConfigError(ex.what());
          }
        }
      }
      for (std::size_t i = 0; i < count; ++i) c.trips.push_back(cycle[i % cycle.size()]);
    }
  }
  c.validate();
  return c;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

void ScenarioConfig::validate() const {
  if (tick_ms <= 0) throw ConfigError("tick_ms must be positive");
  for (auto [name, period] : {std::pair{"cam_ms", emission.cam_ms}, std::pair{"cpm_ms", emission.cpm_ms},
                              std::pair{"spatem_ms", emission.spatem_ms}, std::pair{"mapem_ms", emission.mapem_ms}}) {
    if (period <= 0 || period % tick_ms != 0) {
      throw ConfigError(std::string("emission.") + name + " is not a multiple of the tick");
    }
  }
  if (map.lane.empty()) throw ConfigError("map.lane needs at least two points");
  if (!geom::is_simple_polygon(map.conflict_zone)) throw ConfigError("map.conflict_zone is not a simple polygon");
  if (!map.lane.interval_inside(map.conflict_zone, 0.01)) throw ConfigError("map.lane does not cross the conflict zone");
  if (map.bus_stops.size() != static_cast<std::size_t>(data::kBusStops)) {
    throw ConfigError("map.bus_stops must list exactly two stops");
  }
  for (const auto& st : map.bus_stops) {
    if (map.lane.project(st.position).distance > 0.05) throw ConfigError("bus stop is not on the lane");
  }
  if (map.lane.project(map.bus_stops[0].position).s >= map.lane.project(map.bus_stops[1].position).s) {
    throw ConfigError("bus stop 0 must precede bus stop 1 along the lane");
  }
  std::set<std::string> names;
  for (const auto& o : map.obstructions) {
    if (o.name.empty()) throw ConfigError("map obstruction without a name");
    if (!names.insert(o.name).second) throw ConfigError("duplicate obstruction '" + o.name + "'");
    if (!geom::is_simple_polygon(o.polygon)) throw ConfigError("obstruction '" + o.name + "' is not a simple polygon");
  }
  loss_model();
  if (pedestrians.speed_min <= 0 || pedestrians.speed_max < pedestrians.speed_min) {
    throw ConfigError("pedestrians.walk_speed must satisfy 0 < min <= max");
  }
  if (pedestrians.hazard < 0 || pedestrians.hazard > 1) throw ConfigError("pedestrians.hazard must be in [0, 1]");
  for (const auto& p : pedestrians.processes) {
    if (p.rate < 0) throw ConfigError("pedestrian rate must be non-negative");
    if (p.rate * tick_ms / 1000.0 > 1.0) throw ConfigError("pedestrian rate exceeds one arrival per tick");
    if (p.compliance < 0 || p.compliance > 1) throw ConfigError("compliance_probability must be in [0, 1]");
    if (p.kind == SpawnKind::BusStop && (p.stop < 0 || p.stop >= data::kBusStops)) {
      throw ConfigError("bus_stop process references an unknown stop");
    }
  }
  for (const auto& b : pedestrians.scripted) {
    if (b.trip >= trips.size()) throw ConfigError("scripted pedestrian references a trip that is not scheduled");
    if (b.duration <= 0 || b.after_red < 0) throw ConfigError("scripted pedestrian times must be positive");
  }
  if (max_trip_seconds <= 0) throw ConfigError("max_trip_seconds must be positive");
  if (warmup_ticks < 50) throw ConfigError("warmup_ticks must cover at least 50 background frames");
}

net::LossModel ScenarioConfig::loss_model() const {
  net::LossModel m;
  m.base_loss = network.base_loss;
  m.latency_mean_ms = network.latency_mean_ms;
  m.latency_jitter_ms = network.latency_jitter_ms;
  m.rng_seed = seed;
  for (const auto& z : network.zones) {
    auto it = std::find_if(map.obstructions.begin(), map.obstructions.end(),
                           [&](const Obstruction& o) { return o.name == z.obstruction; });
    if (it == map.obstructions.end()) throw ConfigError("loss zone references unknown obstruction '" + z.obstruction + "'");
    m.zones.push_back({it->name, it->polygon, z.extra_loss, z.mode});
  }
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("network: ") + e.what());
  }
  return m;
}

std::string to_yaml(const ScenarioConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  auto point = [&](geom::Vec2 p) {
    out << YAML::Flow << YAML::BeginSeq << p.x << p.y << YAML::EndSeq;
  };
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << c.name;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "tick_ms" << YAML::Value << c.tick_ms;
  out << YAML::Key << "epoch_ms" << YAML::Value << c.epoch_ms;
  out << YAML::Key << "warmup_ticks" << YAML::Value << c.warmup_ticks;
  out << YAML::Key << "max_trip_seconds" << YAML::Value << c.max_trip_seconds;
  out << YAML::Key << "sensor_range" << YAML::Value << c.sensor_range;
  out << YAML::Key << "onboard_range" << YAML::Value << c.onboard_range;
  out << YAML::Key << "record_planned_every_tick" << YAML::Value << c.record_planned_every_tick;
  out << YAML::Key << "anchor" << YAML::Value << YAML::BeginMap << YAML::Key << "lat" << YAML::Value << c.anchor_lat
      << YAML::Key << "lon" << YAML::Value << c.anchor_lon << YAML::EndMap;
  out << YAML::Key << "map" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "lane" << YAML::Value << YAML::BeginSeq;
  for (auto p : c.map.lane.points()) point(p);
  out << YAML::EndSeq;
  out << YAML::Key << "conflict_zone" << YAML::Value << YAML::BeginSeq;
  for (auto p : c.map.conflict_zone) point(p);
  out << YAML::EndSeq;
  out << YAML::Key << "curb_offset" << YAML::Value << c.map.curb_offset;
  out << YAML::Key << "turnaround_length" << YAML::Value << c.map.turnaround_length;
  out << YAML::Key << "sensor_offset" << YAML::Value << c.map.sensor_offset;
  out << YAML::Key << "platform_near" << YAML::Value << c.map.platform_near;
  out << YAML::Key << "platform_far" << YAML::Value << c.map.platform_far;
  out << YAML::Key << "platform_half_length" << YAML::Value << c.map.platform_half_length;
  out << YAML::Key << "bus_stops" << YAML::Value << YAML::BeginSeq;
  for (const auto& st : c.map.bus_stops) {
    out << YAML::BeginMap << YAML::Key << "position" << YAML::Value;
    point(st.position);
    out << YAML::Key << "heading_deg" << YAML::Value << st.heading * 180.0 / std::numbers::pi << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "obstructions" << YAML::Value << YAML::BeginSeq;
  for (const auto& o : c.map.obstructions) {
    out << YAML::BeginMap << YAML::Key << "name" << YAML::Value << o.name << YAML::Key << "polygon" << YAML::Value
        << YAML::BeginSeq;
    for (auto p : o.polygon) point(p);
    out << YAML::EndSeq << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  out << YAML::Key << "network" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "base_loss" << YAML::Value << c.network.base_loss;
  out << YAML::Key << "latency_mean_ms" << YAML::Value << c.network.latency_mean_ms;
  out << YAML::Key << "latency_jitter_ms" << YAML::Value << c.network.latency_jitter_ms;
  out << YAML::Key << "zones" << YAML::Value << YAML::BeginSeq;
  for (const auto& z : c.network.zones) {
    out << YAML::BeginMap << YAML::Key << "obstruction" << YAML::Value << z.obstruction << YAML::Key << "extra_loss"
        << YAML::Value << z.extra_loss << YAML::Key << "mode" << YAML::Value << zone_mode_name(z.mode) << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  auto kv = [&](const char* key, auto value) { out << YAML::Key << key << YAML::Value << value; };
  out << YAML::Key << "intersection" << YAML::Value << YAML::BeginMap;
  kv("t_near", c.intersection.t_near);
  kv("t_far", c.intersection.t_far);
  kv("t_clear", c.intersection.t_clear);
  kv("hold_window", c.intersection.hold_window);
  kv("exit_margin", c.intersection.exit_margin);
  kv("v_floor", c.intersection.v_floor);
  kv("off_route_distance", c.intersection.off_route_distance);
  kv("initial_mode", crossing::to_string(c.initial_mode));
  out << YAML::EndMap;
  out << YAML::Key << "emission" << YAML::Value << YAML::BeginMap;
  kv("cam_ms", c.emission.cam_ms);
  kv("cpm_ms", c.emission.cpm_ms);
  kv("spatem_ms", c.emission.spatem_ms);
  kv("mapem_ms", c.emission.mapem_ms);
  out << YAML::EndMap;
  const auto& k = c.shuttle;
  out << YAML::Key << "shuttle" << YAML::Value << YAML::BeginMap;
  kv("v_max", k.v_max);
  kv("accel", k.accel);
  kv("comfort_decel", k.comfort_decel);
  kv("emergency_decel", k.emergency_decel);
  kv("lateral_accel", k.lateral_accel);
  kv("footprint_radius", k.footprint_radius);
  kv("r_min", k.r_min);
  kv("docking_speed", k.docking_speed);
  kv("docking_range", k.docking_range);
  kv("restart_hold", k.restart_hold);
  kv("dwell", k.dwell);
  kv("soc_start", k.soc_start);
  kv("soc_per_km", k.soc_per_km);
  kv("max_compute", k.max_compute);
  out << YAML::EndMap;
  out << YAML::Key << "pedestrians" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "walk_speed" << YAML::Value << YAML::Flow << YAML::BeginSeq << c.pedestrians.speed_min
      << c.pedestrians.speed_max << YAML::EndSeq;
  out << YAML::Key << "hazard" << YAML::Value << c.pedestrians.hazard;
  out << YAML::Key << "trigger_range" << YAML::Value << c.pedestrians.trigger_range;
  out << YAML::Key << "processes" << YAML::Value << YAML::BeginSeq;
  for (const auto& p : c.pedestrians.processes) {
    out << YAML::BeginMap << YAML::Key << "kind" << YAML::Value << to_string(p.kind) << YAML::Key << "rate"
        << YAML::Value << p.rate << YAML::Key << "compliance" << YAML::Value << p.compliance << YAML::Key << "stop"
        << YAML::Value << p.stop << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "scripted" << YAML::Value << YAML::BeginSeq;
  for (const auto& b : c.pedestrians.scripted) {
    out << YAML::BeginMap << YAML::Key << "trip" << YAML::Value << b.trip << YAML::Key << "after_red_s"
        << YAML::Value << b.after_red;
    if (b.after_previous) out << YAML::Key << "after_previous_s" << YAML::Value << *b.after_previous;
    out << YAML::Key << "block_s" << YAML::Value << b.duration << YAML::Key << "x"
        << YAML::Value << b.x << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  out << YAML::Key << "trips" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "count" << YAML::Value << c.trips.size();
  out << YAML::Key << "auto_dispatch" << YAML::Value << c.auto_dispatch;
  out << YAML::Key << "cycle" << YAML::Value << YAML::BeginSeq;
  for (const auto& t : c.trips) {
    out << YAML::BeginMap << YAML::Key << "direction" << YAML::Value << shuttle::to_string(t.direction) << YAML::Key
        << "mode" << YAML::Value << crossing::to_string(t.mode) << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace v2xlab::sim
