#include "v2xlab/datastore.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <regex>
#include <set>

namespace v2xlab::data {

namespace fs = std::filesystem;

namespace file {
std::string bus_stop_cpm(int stop) { return "infrastructure/bus_stop_" + std::to_string(stop) + "/cpm.csv"; }
std::string bus_stop_boxes(int stop) {
  return "infrastructure/bus_stop_" + std::to_string(stop) + "/object_bounding_boxes.csv";
}
std::string bus_stop_tracks(int stop) {
  return "infrastructure/bus_stop_" + std::to_string(stop) + "/object_tracks.csv";
}
}  // namespace file

const std::vector<FileSchema>& trip_schemas() {
  static const std::vector<FileSchema> schemas = [] {
    std::vector<FileSchema> s;
    for (int k = 0; k < kBusStops; ++k) {
      s.push_back({file::bus_stop_cpm(k),
                   {"timestamp_ns", "sequence", "station_id", "reference_time_ms", "latitude", "longitude",
                    "object_count", "object_index", "object_id", "dx", "dy", "vx", "vy", "footprint_radius",
                    "classification", "confidence", "rx_timestamp_ns"}});
      s.push_back({file::bus_stop_boxes(k),
                   {"timestamp_ns", "detection_index", "x_m", "y_m", "radius_m", "classification"}});
      s.push_back({file::bus_stop_tracks(k),
                   {"timestamp_ns", "track_id", "x_m", "y_m", "vx_mps", "vy_mps", "radius_m", "classification",
                    "confidence", "status"}});
    }
    s.push_back({std::string(file::kSpatem),
                 {"timestamp_ns", "sequence", "intersection_id", "revision", "signal_group", "event_state",
                  "time_to_change", "intersection_mode"}});
    s.push_back({std::string(file::kMapem),
                 {"timestamp_ns", "sequence", "intersection_id", "latitude", "longitude", "lane_id", "lane_type",
                  "signal_group", "node_index", "x_cm", "y_cm"}});
    s.push_back({std::string(file::kPose), {"timestamp_ns", "x_m", "y_m", "heading_rad"}});
    s.push_back({std::string(file::kCurrentMission),
                 {"timestamp_ns", "mission_id", "direction", "origin_stop", "destination_stop"}});
    s.push_back({std::string(file::kPlannedTrajectory),
                 {"timestamp_ns", "source", "sample_index", "t_s", "x_m", "y_m", "heading_rad", "speed_mps"}});
    s.push_back({std::string(file::kVelocity), {"timestamp_ns", "speed_mps", "vx_mps", "vy_mps"}});
    s.push_back({std::string(file::kStateOfCharge), {"timestamp_ns", "soc_percent"}});
    s.push_back({std::string(file::kDoorStatus), {"timestamp_ns", "door_status", "front_open", "rear_open"}});
    s.push_back({std::string(file::kMissionProgress), {"timestamp_ns", "mission_id", "progress"}});
    s.push_back({std::string(file::kDrivingStatus), {"timestamp_ns", "driving_status"}});
    s.push_back({std::string(file::kSteeringAngle), {"timestamp_ns", "steering_rad"}});
    s.push_back({std::string(file::kCam),
                 {"timestamp_ns", "sequence", "station_id", "generation_delta_time", "latitude", "longitude",
                  "heading", "speed", "door_status", "indicator_status", "mission_id", "mission_progress"}});
    return s;
  }();
  return schemas;
}

const FileSchema& schema_for(std::string_view path) {
  for (const auto& s : trip_schemas()) {
    if (s.path == path) return s;
  }
  throw SchemaError("no schema for '" + std::string(path) + "'");
}

AliasTable AliasTable::parse_yaml(const std::string& text) {
  AliasTable t;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw SchemaError(std::string("alias table: ") + e.what());
  }
  YAML::Node map = root["aliases"] ? root["aliases"] : root;
  if (!map.IsMap()) throw SchemaError("alias table must be a mapping");
  for (const auto& kv : map) t.names[kv.first.as<std::string>()] = kv.second.as<std::string>();
  return t;
}

AliasTable AliasTable::load(const fs::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw SchemaError("cannot open alias table " + path.string());
  std::string text;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, f)) > 0;) text.append(buf, n);
  std::fclose(f);
  return parse_yaml(text);
}

std::string AliasTable::canonical(std::string_view path, const std::string& column) const {
  if (auto it = names.find(std::string(path) + ":" + column); it != names.end()) return it->second;
  if (auto it = names.find(column); it != names.end()) return it->second;
  return column;
}

// Columns that foreign recordings may lack; analyses fall back when they are absent.
static bool optional_column(std::string_view path, std::string_view column) {
  if (path.find("/cpm.csv") != std::string_view::npos) return column == "sequence" || column == "rx_timestamp_ns";
  if (path == file::kSpatem) return column == "intersection_mode";
  return false;
}

csv::Table conform(const csv::Table& table, const FileSchema& schema, const AliasTable* aliases) {
  if (!aliases) {
    if (table.header.size() < schema.columns.size() ||
        !std::equal(schema.columns.begin(), schema.columns.end(), table.header.begin())) {
      std::string got;
      for (const auto& h : table.header) got += (got.empty() ? "" : ",") + h;
      throw SchemaError(schema.path + ": unexpected header '" + got + "'");
    }
    return table;
  }
  std::vector<std::string> renamed;
  for (const auto& h : table.header) renamed.push_back(aliases->canonical(schema.path, h));
  std::vector<std::size_t> order;
  for (const auto& c : schema.columns) {
    auto it = std::find(renamed.begin(), renamed.end(), c);
    if (it == renamed.end()) {
      if (optional_column(schema.path, c)) continue;
      throw SchemaError(schema.path + ": missing column '" + c + "'");
    }
    order.push_back(static_cast<std::size_t>(it - renamed.begin()));
  }
  for (std::size_t i = 0; i < renamed.size(); ++i) {
    if (std::find(order.begin(), order.end(), i) == order.end()) order.push_back(i);
  }
  csv::Table out;
  for (auto i : order) out.header.push_back(renamed[i]);
  out.rows.reserve(table.rows.size());
  for (const auto& r : table.rows) {
    auto& row = out.rows.emplace_back();
    for (auto i : order) row.push_back(r[i]);
  }
  return out;
}

fs::path TripRecord::relative_dir() const { return fs::path(date) / ("trip_" + std::to_string(index)); }

csv::Table& TripRecord::table(std::string_view path) {
  auto it = files.find(std::string(path));
  if (it == files.end()) throw SchemaError("trip has no file '" + std::string(path) + "'");
  return it->second;
}

const csv::Table& TripRecord::table(std::string_view path) const {
  auto it = files.find(std::string(path));
  if (it == files.end()) throw SchemaError("trip has no file '" + std::string(path) + "'");
  return it->second;
}

TripRecord empty_trip(std::string date, std::size_t index) {
  TripRecord t;
  t.date = std::move(date);
  t.index = index;
  for (const auto& s : trip_schemas()) t.files[s.path].header = s.columns;
  return t;
}

void write_trip(const fs::path& dataset_root, const TripRecord& trip) {
  const fs::path dir = dataset_root / trip.relative_dir();
  for (const auto& s : trip_schemas()) {
    const auto& t = trip.table(s.path);
    conform(t, s);
    fs::create_directories((dir / s.path).parent_path());
    csv::write_file(dir / s.path, t);
  }
}

TripRecord read_trip(const fs::path& trip_dir, const AliasTable* aliases) {
  TripRecord t;
  t.date = trip_dir.parent_path().filename().string();
  const std::string name = trip_dir.filename().string();
  if (name.rfind("trip_", 0) != 0) throw SchemaError("not a trip directory: " + trip_dir.string());
  t.index = static_cast<std::size_t>(csv::to_int(std::string_view(name).substr(5)));
  for (const auto& s : trip_schemas()) {
    const fs::path p = trip_dir / s.path;
    if (!fs::exists(p)) throw SchemaError("missing file " + p.string());
    t.files[s.path] = conform(csv::read_file(p), s, aliases);
  }
  return t;
}

namespace {

const std::regex kDatePattern(R"(\d{4}-\d{2}-\d{2})");
const std::regex kTripPattern(R"(trip_(0|[1-9]\d*))");

fs::path resolve_root(const fs::path& root) {
  if (fs::is_directory(root / "dataset")) return root / "dataset";
  return root;
}

}  // namespace

std::vector<TripRef> list_trips(const fs::path& dataset_root) {
  const fs::path root = resolve_root(dataset_root);
  std::vector<TripRef> out;
  if (!fs::is_directory(root)) throw SchemaError("dataset directory not found: " + dataset_root.string());
  for (const auto& d : fs::directory_iterator(root)) {
    if (!d.is_directory() || !std::regex_match(d.path().filename().string(), kDatePattern)) continue;
    for (const auto& t : fs::directory_iterator(d.path())) {
      const std::string n = t.path().filename().string();
      if (!t.is_directory() || !std::regex_match(n, kTripPattern)) continue;
      out.push_back({d.path().filename().string(), static_cast<std::size_t>(std::stoull(n.substr(5))), t.path()});
    }
  }
  std::sort(out.begin(), out.end(), [](const TripRef& a, const TripRef& b) {
    return a.date != b.date ? a.date < b.date : a.index < b.index;
  });
  return out;
}

LayoutReport validate_layout(const fs::path& dataset_root) {
  LayoutReport rep;
  const fs::path root = resolve_root(dataset_root);
  if (!fs::is_directory(root)) {
    rep.problems.push_back("dataset directory not found: " + dataset_root.string());
    return rep;
  }
  std::set<std::string> expected_files;
  std::set<std::string> expected_dirs;
  for (const auto& s : trip_schemas()) {
    expected_files.insert(s.path);
    for (fs::path p = fs::path(s.path).parent_path(); !p.empty(); p = p.parent_path()) expected_dirs.insert(p.string());
  }
  for (const auto& d : fs::directory_iterator(root)) {
    const std::string dn = d.path().filename().string();
    if (!d.is_directory() || !std::regex_match(dn, kDatePattern)) {
      rep.problems.push_back("unexpected entry in dataset root: " + dn);
      continue;
    }
    std::vector<std::size_t> indices;
    for (const auto& t : fs::directory_iterator(d.path())) {
      const std::string tn = t.path().filename().string();
      if (!t.is_directory() || !std::regex_match(tn, kTripPattern)) {
        rep.problems.push_back(dn + ": unexpected entry " + tn);
        continue;
      }
      indices.push_back(std::stoull(tn.substr(5)));
      ++rep.trips;
      const std::string where = dn + "/" + tn;
      for (const auto& e : fs::recursive_directory_iterator(t.path())) {
        const std::string rel = fs::relative(e.path(), t.path()).generic_string();
        if (e.is_directory() ? !expected_dirs.count(rel) : !expected_files.count(rel)) {
          rep.problems.push_back(where + ": unexpected " + rel);
        }
      }
      for (const auto& s : trip_schemas()) {
        const fs::path p = t.path() / s.path;
        if (!fs::is_regular_file(p)) {
          rep.problems.push_back(where + ": missing " + s.path);
          continue;
        }
        try {
          const auto table = conform(csv::read_file(p), s);
          SimTime last = std::numeric_limits<SimTime>::min();
          for (std::size_t r = 0; r < table.rows.size(); ++r) {
            const SimTime ts = csv::to_int(table.rows[r][0]);
            if (ts < last) {
              rep.problems.push_back(where + ": " + s.path + " timestamps decrease at row " + std::to_string(r + 1));
              break;
            }
            last = ts;
          }
        } catch (const std::exception& e) {
          rep.problems.push_back(where + ": " + e.what());
        }
      }
    }
    std::sort(indices.begin(), indices.end());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] != i) {
        rep.problems.push_back(dn + ": trip indices are not contiguous from 0");
        break;
      }
    }
  }
  return rep;
}

std::string DatasetInfo::summary() const {
  const auto total = static_cast<long long>(std::llround(driving_seconds));
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu recordings over %zu day(s), total driving duration %lld h %lld min (%.1f s)",
                trips, trips_per_date.size(), total / 3600, (total % 3600) / 60, driving_seconds);
  return buf;
}

DatasetInfo dataset_info(const fs::path& dataset_root) {
  DatasetInfo info;
  for (const auto& ref : list_trips(dataset_root)) {
    ++info.trips;
    ++info.trips_per_date[ref.date];
    const auto ds = conform(csv::read_file(ref.dir / file::kDrivingStatus), schema_for(file::kDrivingStatus));
    std::optional<SimTime> first, last;
    for (const auto& r : ds.rows) {
      if (r[1] != "autonomous") continue;
      const SimTime t = csv::to_int(r[0]);
      if (!first) first = t;
      last = t;
    }
    if (first) info.driving_seconds += to_seconds(*last - *first);
  }
  return info;
}

std::string date_of(std::uint64_t epoch_ms) {
  using namespace std::chrono;
  const sys_days day = floor<days>(sys_time<milliseconds>(milliseconds(epoch_ms)));
  const year_month_day ymd(day);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

std::string fmt_ns(SimTime t) { return std::to_string(t); }
std::string fmt_m(double v) { return csv::fixed(v, 3); }
std::string fmt_rad(double v) { return csv::fixed(v, 6); }

const char* to_string(CloseReason r) {
  switch (r) {
    case CloseReason::Completed: return "completed";
    case CloseReason::MissionCleared: return "mission_cleared";
    case CloseReason::Overlap: return "overlap";
    case CloseReason::EndOfStream: return "end_of_stream";
  }
  return "unknown";
}

std::vector<SegmentEvent> MissionSegmenter::feed(SimTime at, const codec::CamPayload& cam) {
  std::vector<SegmentEvent> ev;
  const std::uint16_t id = cam.mission_id;
  if (id == 0) {
    finished_.reset();
    if (open_) {
      ev.push_back({SegmentEvent::Kind::Close, at, *open_, CloseReason::MissionCleared, false});
      open_.reset();
    }
    return ev;
  }
  if (open_ && *open_ != id) {
    ev.push_back({SegmentEvent::Kind::Close, at, *open_, CloseReason::Overlap, true});
    open_.reset();
  }
  if (!open_) {
    if (finished_ && *finished_ == id) return ev;
    finished_.reset();
    open_ = id;
    ev.push_back({SegmentEvent::Kind::Open, at, id, CloseReason::Completed, !ev.empty()});
  }
  if (cam.mission_progress >= 1000) {
    ev.push_back({SegmentEvent::Kind::Close, at, id, CloseReason::Completed, false});
    finished_ = id;
    open_.reset();
  }
  return ev;
}

std::optional<SegmentEvent> MissionSegmenter::finish(SimTime at) {
  if (!open_) return std::nullopt;
  SegmentEvent e{SegmentEvent::Kind::Close, at, *open_, CloseReason::EndOfStream, false};
  open_.reset();
  return e;
}

std::vector<TripWindow> segment_trips(std::span<const std::pair<SimTime, codec::CamPayload>> stream) {
  MissionSegmenter seg;
  std::vector<TripWindow> out;
  std::optional<TripWindow> cur;
  auto handle = [&](const SegmentEvent& e) {
    if (e.kind == SegmentEvent::Kind::Open) {
      cur = TripWindow{e.mission_id, e.at, e.at, CloseReason::EndOfStream};
    } else if (cur) {
      // A trip cleared by a mission-0 CAM ends with the last CAM that carried it.
      if (e.reason != CloseReason::MissionCleared && e.reason != CloseReason::Overlap) cur->end = e.at;
      cur->closed_by = e.reason;
      out.push_back(*cur);
      cur.reset();
    }
  };
  SimTime last = 0;
  for (const auto& [t, cam] : stream) {
    for (const auto& e : seg.feed(t, cam)) handle(e);
    last = t;
    if (cur) cur->end = t;
  }
  if (auto e = seg.finish(last)) handle(*e);
  return out;
}

}  // namespace v2xlab::data
