#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <optional>

#include "v2xlab/analysis.hpp"
#include "v2xlab/codec.hpp"
#include "v2xlab/datastore.hpp"
#include "v2xlab/simcore.hpp"
#include "v2xlab/telemetry.hpp"

namespace py = pybind11;
using namespace v2xlab;
namespace fs = std::filesystem;

namespace {

template <class T>
T field(const py::dict& d, const char* key, T fallback = {}) {
  return d.contains(key) ? d[key].cast<T>() : fallback;
}

py::list list_field(const py::dict& d, const char* key) {
  return d.contains(key) ? d[key].cast<py::list>() : py::list();
}

py::dict to_dict(const codec::V2xMessage& m) {
  py::dict d;
  d["station_id"] = m.header.station_id;
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, codec::CamPayload>) {
          d["type"] = "cam";
          d["generation_delta_time"] = p.generation_delta_time;
          d["latitude"] = p.latitude;
          d["longitude"] = p.longitude;
          d["heading"] = p.heading;
          d["speed"] = p.speed;
          d["door_status"] = p.door_status;
          d["indicator"] = static_cast<int>(p.indicator_status);
          d["mission_id"] = p.mission_id;
          d["mission_progress"] = p.mission_progress;
        } else if constexpr (std::is_same_v<P, codec::CpmPayload>) {
          d["type"] = "cpm";
          d["reference_time"] = p.reference_time;
          d["latitude"] = p.latitude;
          d["longitude"] = p.longitude;
          py::list objs;
          for (const auto& o : p.objects) {
            py::dict od;
            od["object_id"] = o.object_id;
            od["dx"] = o.dx;
            od["dy"] = o.dy;
            od["vx"] = o.vx;
            od["vy"] = o.vy;
            od["footprint_radius"] = o.footprint_radius;
            od["classification"] = static_cast<int>(o.classification);
            od["confidence"] = o.confidence;
            objs.append(od);
          }
          d["objects"] = objs;
        } else if constexpr (std::is_same_v<P, codec::SpatemPayload>) {
          d["type"] = "spatem";
          d["intersection_id"] = p.intersection_id;
          d["revision"] = p.revision;
          py::list mv;
          for (const auto& s : p.movements) {
            py::dict sd;
            sd["signal_group_id"] = s.signal_group_id;
            sd["event_state"] = static_cast<int>(s.event_state);
            sd["time_to_change"] = s.time_to_change;
            mv.append(sd);
          }
          d["movements"] = mv;
        } else {
          d["type"] = "mapem";
          d["intersection_id"] = p.intersection_id;
          d["latitude"] = p.latitude;
          d["longitude"] = p.longitude;
          py::list lanes;
          for (const auto& l : p.lanes) {
            py::dict ld;
            ld["lane_id"] = l.lane_id;
            ld["lane_type"] = static_cast<int>(l.lane_type);
            ld["signal_group_id"] = l.signal_group_id;
            py::list nodes;
            for (const auto& n : l.nodes) nodes.append(py::make_tuple(n.x_cm, n.y_cm));
            ld["nodes"] = nodes;
            lanes.append(ld);
          }
          d["lanes"] = lanes;
        }
      },
      m.payload);
  return d;
}

codec::V2xMessage from_dict(const py::dict& d) {
  const auto type = d["type"].cast<std::string>();
  const auto station = field<std::uint32_t>(d, "station_id");
  if (type == "cam") {
    codec::CamPayload p;
    p.generation_delta_time = field<std::uint16_t>(d, "generation_delta_time");
    p.latitude = field<std::int32_t>(d, "latitude");
    p.longitude = field<std::int32_t>(d, "longitude");
    p.heading = field<std::uint16_t>(d, "heading", codec::kHeadingUnavailable);
    p.speed = field<std::uint16_t>(d, "speed", codec::kSpeedUnavailable);
    p.door_status = field<std::uint8_t>(d, "door_status");
    p.indicator_status = static_cast<codec::Indicator>(field<int>(d, "indicator"));
    p.mission_id = field<std::uint16_t>(d, "mission_id");
    p.mission_progress = field<std::uint16_t>(d, "mission_progress");
    return codec::make_message(station, p);
  }
  if (type == "cpm") {
    codec::CpmPayload p;
    p.reference_time = field<std::uint64_t>(d, "reference_time");
    p.latitude = field<std::int32_t>(d, "latitude");
    p.longitude = field<std::int32_t>(d, "longitude");
    for (const auto& h : list_field(d, "objects")) {
      const auto od = h.cast<py::dict>();
      codec::PerceivedObject o;
      o.object_id = field<std::uint16_t>(od, "object_id");
      o.dx = field<std::int16_t>(od, "dx");
      o.dy = field<std::int16_t>(od, "dy");
      o.vx = field<std::int16_t>(od, "vx");
      o.vy = field<std::int16_t>(od, "vy");
      o.footprint_radius = field<std::uint16_t>(od, "footprint_radius");
      o.classification = static_cast<codec::ObjectClass>(field<int>(od, "classification"));
      o.confidence = field<std::uint8_t>(od, "confidence");
      p.objects.push_back(o);
    }
    return codec::make_message(station, p);
  }
  if (type == "spatem") {
    codec::SpatemPayload p;
    p.intersection_id = field<std::uint16_t>(d, "intersection_id");
    p.revision = field<std::uint8_t>(d, "revision");
    for (const auto& h : list_field(d, "movements")) {
      const auto sd = h.cast<py::dict>();
      p.movements.push_back({field<std::uint8_t>(sd, "signal_group_id"),
                             static_cast<codec::EventState>(field<int>(sd, "event_state", 3)),
                             field<std::uint16_t>(sd, "time_to_change", codec::kTimeToChangeUnknown)});
    }
    return codec::make_message(station, p);
  }
  if (type == "mapem") {
    codec::MapemPayload p;
    p.intersection_id = field<std::uint16_t>(d, "intersection_id");
    p.latitude = field<std::int32_t>(d, "latitude");
    p.longitude = field<std::int32_t>(d, "longitude");
    for (const auto& h : list_field(d, "lanes")) {
      const auto ld = h.cast<py::dict>();
      codec::MapLane l;
      l.lane_id = field<std::uint8_t>(ld, "lane_id");
      l.lane_type = static_cast<codec::LaneType>(field<int>(ld, "lane_type"));
      l.signal_group_id = field<std::uint8_t>(ld, "signal_group_id");
      for (const auto& n : list_field(ld, "nodes")) {
        const auto xy = n.cast<std::pair<std::int16_t, std::int16_t>>();
        l.nodes.push_back({xy.first, xy.second});
      }
      p.lanes.push_back(std::move(l));
    }
    return codec::make_message(station, p);
  }
  throw py::value_error("unknown message type '" + type + "'");
}

py::dict run_summary(const sim::RunLog& log) {
  py::list trips;
  for (const auto& t : log.trips) {
    py::dict d;
    d["index"] = t.index;
    d["mission_id"] = t.mission_id;
    d["direction"] = shuttle::to_string(t.direction);
    d["mode"] = crossing::to_string(t.mode);
    d["travel_time_s"] = t.completed_at ? py::cast(t.travel_time()) : py::none();
    d["zone_entries"] = t.zone_entries;
    trips.append(d);
  }
  py::dict d;
  d["trips"] = trips;
  d["ticks"] = log.trace.size();
  d["pedestrians_spawned"] = log.pedestrians_spawned;
  d["net_digest"] = log.net_digest;
  return d;
}

sim::RunLog load_run_log(const fs::path& path, const std::optional<fs::path>& scenario) {
  if (fs::is_regular_file(path)) return sim::read_world_trace(path);
  if (fs::exists(path / "world_trace.csv")) return sim::read_world_trace(path / "world_trace.csv");
  sim::ScenarioConfig cfg;
  std::optional<geom::Polygon> zone;
  if (scenario) {
    cfg = sim::load_scenario(*scenario);
    zone = cfg.map.conflict_zone;
  }
  const auto root = fs::is_directory(path / "dataset") ? path / "dataset" : path;
  return analysis::run_log_from_dataset(root, geo::GeoAnchor{cfg.anchor_lat, cfg.anchor_lon}, zone);
}

// Owns a simulation together with the telemetry aggregator that observes it.
class PySimulation {
 public:
  PySimulation(sim::ScenarioConfig cfg, std::optional<fs::path> out_dir)
      : sim_(std::make_unique<sim::Simulation>(std::move(cfg), std::move(out_dir))), agg_(sim_->anchor()) {}

  void step(std::size_t ticks) {
    for (std::size_t i = 0; i < ticks; ++i) {
      sim_->step();
      agg_.ingest(sim_->last_output());
    }
  }

  py::dict run() {
    while (!sim_->finished()) step(1);
    sim_->finalize();
    return run_summary(sim_->log());
  }

  sim::Simulation& sim() { return *sim_; }
  std::string snapshot() const { return telemetry::to_json(agg_.snapshot()).dump(); }

 private:
  std::unique_ptr<sim::Simulation> sim_;
  telemetry::Aggregator agg_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "V2X public-transport simulation lab";

  auto decode_error = py::register_exception<codec::DecodeError>(m, "DecodeError", PyExc_ValueError);
  (void)decode_error;
  py::register_exception<codec::InvariantViolation>(m, "InvariantViolation", PyExc_ValueError);
  py::register_exception<sim::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<data::SchemaError>(m, "SchemaError", PyExc_ValueError);

  m.def(
      "encode",
      [](const py::dict& d) {
        const auto b = codec::encode(from_dict(d));
        return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
      },
      py::arg("message"));
  m.def(
      "decode",
      [](const py::bytes& data) {
        const std::string s = data;
        const std::vector<std::uint8_t> b(s.begin(), s.end());
        return to_dict(codec::decode(b));
      },
      py::arg("data"));

  py::class_<sim::ScenarioConfig>(m, "Scenario")
      .def_static("load", [](const fs::path& p) { return sim::load_scenario(p); }, py::arg("path"))
      .def_static("parse", &sim::parse_scenario, py::arg("yaml_text"))
      .def_readwrite("name", &sim::ScenarioConfig::name)
      .def_readwrite("seed", &sim::ScenarioConfig::seed)
      .def_readwrite("auto_dispatch", &sim::ScenarioConfig::auto_dispatch)
      .def_property(
          "trips", [](const sim::ScenarioConfig& c) { return c.trips.size(); },
          [](sim::ScenarioConfig& c, std::size_t n) {
            if (c.trips.empty()) c.trips.push_back({});
            std::vector<sim::TripSpec> t;
            for (std::size_t i = 0; i < n; ++i) t.push_back(c.trips[i % c.trips.size()]);
            c.trips = std::move(t);
          })
      .def("to_yaml", &sim::to_yaml);

  py::class_<PySimulation>(m, "Simulation")
      .def(py::init<sim::ScenarioConfig, std::optional<fs::path>>(), py::arg("scenario"), py::arg("out_dir") = py::none())
      .def("step", &PySimulation::step, py::arg("ticks") = 1)
      .def("run", &PySimulation::run, "Runs every scheduled trip and writes outputs")
      .def_property_readonly("tick", [](PySimulation& s) { return s.sim().tick_index(); })
      .def_property_readonly("time_s", [](PySimulation& s) { return to_seconds(s.sim().now()); })
      .def_property_readonly("finished", [](PySimulation& s) { return s.sim().finished(); })
      .def_property_readonly("trip_active", [](PySimulation& s) { return s.sim().trip_active(); })
      .def_property_readonly("trips_completed", [](PySimulation& s) { return s.sim().trips_completed(); })
      .def("dispatch_mission",
           [](PySimulation& s, const std::string& d) { return s.sim().dispatch_mission(shuttle::parse_direction(d)); },
           py::arg("direction"), "Returns an empty string on success, else the rejection reason")
      .def("set_intersection_mode",
           [](PySimulation& s, const std::string& mode) { s.sim().set_intersection_mode(crossing::parse_mode(mode)); },
           py::arg("mode"))
      .def("pause_shuttle", [](PySimulation& s) { s.sim().pause_shuttle(); })
      .def("resume_shuttle", [](PySimulation& s) { s.sim().resume_shuttle(); })
      .def("shuttle_state",
           [](PySimulation& s) {
             const auto& a = s.sim().shuttle();
             py::dict d;
             d["x"] = a.state().pose.position.x;
             d["y"] = a.state().pose.position.y;
             d["heading"] = a.state().pose.heading;
             d["speed"] = a.state().speed;
             d["mission_id"] = a.mission().mission_id;
             d["progress"] = a.mission().progress;
             d["driving_status"] = shuttle::to_string(a.driving_status());
             return d;
           })
      .def("crossing_state",
           [](PySimulation& s) {
             const auto& c = s.sim().crossing().state();
             py::dict d;
             d["phase"] = crossing::to_string(c.phase);
             d["mode"] = crossing::to_string(c.mode);
             return d;
           })
      .def("_snapshot", &PySimulation::snapshot)
      .def("_compliance", [](PySimulation& s) { return analysis::to_json(analysis::non_compliance(s.sim().log())); })
      .def("_red_fraction", [](PySimulation& s) { return analysis::to_json(analysis::red_fraction(s.sim().log())); });

  m.def(
      "_package_loss",
      [](const fs::path& root, const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& zones,
         double cell_size, std::size_t min_cell_samples) {
        analysis::LossOptions o;
        o.cell_size = cell_size;
        o.min_cell_samples = min_cell_samples;
        for (const auto& [name, pts] : zones) {
          geom::Polygon poly;
          for (const auto& [x, y] : pts) poly.push_back({x, y});
          o.zones.push_back({name, poly});
        }
        return analysis::to_json(analysis::package_loss(root, o));
      },
      py::arg("root"), py::arg("zones"), py::arg("cell_size"), py::arg("min_cell_samples"));
  m.def("_travel_times", [](const fs::path& root) { return analysis::to_json(analysis::travel_times(root)); });
  m.def("_non_compliance", [](const fs::path& path, std::optional<fs::path> scenario) {
    return analysis::to_json(analysis::non_compliance(load_run_log(path, scenario)));
  });
  m.def("_red_fraction", [](const fs::path& path, std::optional<fs::path> scenario) {
    return analysis::to_json(analysis::red_fraction(load_run_log(path, scenario)));
  });
  m.def(
      "red_time_fraction",
      [](const std::vector<std::pair<double, std::string>>& log, double start_s, double end_s) {
        std::vector<crossing::PhaseLogEntry> entries;
        for (const auto& [t, phase] : log) entries.push_back({from_seconds(t), crossing::parse_phase(phase)});
        const auto r = crossing::red_time_fraction(entries, from_seconds(start_s), from_seconds(end_s));
        py::dict d;
        d["red_seconds"] = r.red_seconds;
        d["horizon_seconds"] = r.horizon_seconds;
        d["fraction_immediate_cross"] = r.fraction_immediate_cross;
        return d;
      },
      py::arg("log"), py::arg("start_s"), py::arg("end_s"),
      "Phase log entries are (seconds, phase name) pairs, e.g. (0.0, 'PED_GREEN')");
  m.def(
      "validate_dataset",
      [](const fs::path& root) {
        const auto r = data::validate_layout(root);
        py::dict d;
        d["ok"] = r.ok();
        d["trips"] = r.trips;
        d["problems"] = r.problems;
        return d;
      },
      py::arg("root"));
  m.def("dataset_summary", [](const fs::path& root) { return data::dataset_info(root).summary(); }, py::arg("root"));
}
