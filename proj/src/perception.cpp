#include "v2xlab/perception.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>
#include <unordered_map>

#include "v2xlab/csv.hpp"

namespace v2xlab::perception {

CellKey BackgroundModel::cell_of(double x, double y) const {
  return {static_cast<std::int32_t>(std::floor(x / cell_size_)),
          static_cast<std::int32_t>(std::floor(y / cell_size_))};
}

double BackgroundModel::ratio(double x, double y) const {
  auto it = occupancy_.find(cell_of(x, y));
  return it == occupancy_.end() ? 0.0 : it->second;
}

BackgroundModel learn_background(std::span<const Scan> scans, double cell_size, std::size_t min_frames) {
  if (scans.size() < min_frames) {
    throw InsufficientFrames("background learning needs " + std::to_string(min_frames) +
                             " frames, got " + std::to_string(scans.size()));
  }
  if (!(cell_size > 0.0)) throw std::invalid_argument("cell_size must be positive");
  BackgroundModel probe(cell_size, {}, 0);
  std::map<CellKey, std::size_t> counts;
  std::vector<CellKey> seen;
  for (const auto& scan : scans) {
    seen.clear();
    for (const auto& p : scan.points) seen.push_back(probe.cell_of(p.x, p.y));
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    for (const auto& c : seen) ++counts[c];
  }
  std::map<CellKey, double> occupancy;
  const double n = static_cast<double>(scans.size());
  for (const auto& [c, k] : counts) occupancy[c] = static_cast<double>(k) / n;
  return BackgroundModel(cell_size, std::move(occupancy), scans.size());
}

std::vector<ScanPoint> subtract_background(const Scan& scan, const BackgroundModel& model, double threshold) {
  std::vector<ScanPoint> out;
  for (const auto& p : scan.points) {
    if (model.ratio(p.x, p.y) < threshold) out.push_back(p);
  }
  return out;
}

namespace {

struct DisjointSet {
  std::vector<std::size_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }
};

std::uint64_t pack(std::int64_t ix, std::int64_t iy) {
  return (static_cast<std::uint64_t>(ix) << 32) ^ static_cast<std::uint32_t>(iy);
}

}  // namespace

std::vector<Cluster> cluster(std::span<const ScanPoint> points, double eps, std::size_t min_pts) {
  const std::size_t n = points.size();
  DisjointSet ds(n);
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> grid;
  auto cell = [eps](double v) { return static_cast<std::int64_t>(std::floor(v / eps)); };
  for (std::size_t i = 0; i < n; ++i) grid[pack(cell(points[i].x), cell(points[i].y))].push_back(i);
  const double eps2 = eps * eps;
  for (std::size_t i = 0; i < n; ++i) {
    const auto cx = cell(points[i].x);
    const auto cy = cell(points[i].y);
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        auto it = grid.find(pack(cx + dx, cy + dy));
        if (it == grid.end()) continue;
        for (std::size_t j : it->second) {
          if (j <= i) continue;
          const double ddx = points[i].x - points[j].x;
          const double ddy = points[i].y - points[j].y;
          if (ddx * ddx + ddy * ddy <= eps2) ds.unite(i, j);
        }
      }
    }
  }
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[ds.find(i)].push_back(i);

  std::vector<std::pair<std::size_t, Cluster>> keyed;
  for (auto& [root, members] : groups) {
    if (members.size() < min_pts) continue;
    Cluster c;
    double sx = 0.0, sy = 0.0;
    for (std::size_t i : members) {
      c.points.push_back(points[i]);
      sx += points[i].x;
      sy += points[i].y;
    }
    c.centroid = {sx / members.size(), sy / members.size()};
    keyed.emplace_back(members.front(), std::move(c));
  }
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    return std::tie(a.second.centroid.x, a.second.centroid.y, a.first) <
           std::tie(b.second.centroid.x, b.second.centroid.y, b.first);
  });
  std::vector<Cluster> out;
  out.reserve(keyed.size());
  for (auto& [_, c] : keyed) out.push_back(std::move(c));
  return out;
}

ClassifiedObject classify(const Cluster& c) {
  ClassifiedObject o;
  if (c.points.empty()) return o;
  double zmin = std::numeric_limits<double>::infinity();
  double zmax = -zmin;
  for (const auto& p : c.points) {
    o.footprint_radius = std::max(o.footprint_radius, geom::distance({p.x, p.y}, c.centroid));
    zmin = std::min(zmin, p.z);
    zmax = std::max(zmax, p.z);
  }
  o.height_span = zmax - zmin;
  const bool ped_size = o.footprint_radius >= 0.1 && o.footprint_radius <= 0.5;
  o.cls = ped_size && o.height_span >= 0.8 ? ObjectClass::Pedestrian : ObjectClass::Other;
  return o;
}

const char* to_string(TrackStatus s) {
  switch (s) {
    case TrackStatus::Tentative: return "tentative";
    case TrackStatus::Confirmed: return "confirmed";
    case TrackStatus::Dead: return "dead";
  }
  return "unknown";
}

std::uint8_t track_confidence(std::uint32_t hits) {
  return static_cast<std::uint8_t>(std::min<std::uint64_t>(100, 20ull * hits));
}

const std::vector<Track>& Tracker::update(std::span<const Detection> detections, double dt) {
  if (!(dt > 0.0)) throw NonPositiveDt("tracker dt must be positive");
  std::erase_if(tracks_, [](const Track& t) { return t.status == TrackStatus::Dead; });

  std::vector<geom::Vec2> previous(tracks_.size());
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    previous[i] = tracks_[i].position;
    tracks_[i].position = tracks_[i].position + tracks_[i].velocity * dt;
  }

  struct Pair {
    double d;
    std::size_t track;
    std::size_t det;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    for (std::size_t j = 0; j < detections.size(); ++j) {
      const double d = geom::distance(tracks_[i].position, detections[j].position);
      if (d <= config_.gate) pairs.push_back({d, i, j});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(a.d, a.track, a.det) < std::tie(b.d, b.track, b.det);
  });

  std::vector<bool> track_used(tracks_.size(), false);
  std::vector<bool> det_used(detections.size(), false);
  const double alpha = config_.velocity_alpha;
  for (const auto& p : pairs) {
    if (track_used[p.track] || det_used[p.det]) continue;
    track_used[p.track] = det_used[p.det] = true;
    Track& t = tracks_[p.track];
    const Detection& d = detections[p.det];
    const geom::Vec2 raw = (d.position - previous[p.track]) * (1.0 / dt);
    t.velocity = raw * alpha + t.velocity * (1.0 - alpha);
    t.position = d.position;
    t.footprint_radius = d.radius;
    t.cls = d.cls;
    ++t.hits;
    t.misses = 0;
    if (t.hits >= config_.confirm_hits) t.status = TrackStatus::Confirmed;
    t.confidence = track_confidence(t.hits);
  }
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    if (track_used[i]) continue;
    Track& t = tracks_[i];
    ++t.misses;
    if (t.misses >= config_.delete_misses) t.status = TrackStatus::Dead;
  }
  for (std::size_t j = 0; j < detections.size(); ++j) {
    if (det_used[j]) continue;
    Track t;
    t.track_id = static_cast<std::uint16_t>(next_id_++);
    t.position = detections[j].position;
    t.footprint_radius = detections[j].radius;
    t.cls = detections[j].cls;
    t.hits = 1;
    t.confidence = track_confidence(1);
    t.status = t.hits >= config_.confirm_hits ? TrackStatus::Confirmed : TrackStatus::Tentative;
    tracks_.push_back(t);
  }
  return tracks_;
}

std::int16_t quantize_centi(double value) {
  const double scaled = std::round(value * 100.0);
  if (scaled >= 32767.0) return 32767;
  if (scaled <= -32768.0) return -32768;
  return static_cast<std::int16_t>(scaled);
}

CpmEmission emit_cpm(const StationAnchor& station, std::span<const Track> tracks,
                     std::uint64_t reference_time_ms) {
  CpmEmission e;
  e.payload.reference_time = reference_time_ms;
  e.payload.latitude = station.latitude;
  e.payload.longitude = station.longitude;
  std::vector<const Track*> confirmed;
  for (const auto& t : tracks) {
    if (t.status == TrackStatus::Confirmed) confirmed.push_back(&t);
  }
  std::sort(confirmed.begin(), confirmed.end(),
            [](const Track* a, const Track* b) { return a->track_id < b->track_id; });
  if (confirmed.size() > codec::kMaxCpmObjects) {
    confirmed.resize(codec::kMaxCpmObjects);
    e.truncated = true;
  }
  for (const Track* t : confirmed) {
    codec::PerceivedObject o;
    o.object_id = t->track_id;
    o.dx = quantize_centi(t->position.x - station.reference_enu.x);
    o.dy = quantize_centi(t->position.y - station.reference_enu.y);
    o.vx = quantize_centi(t->velocity.x);
    o.vy = quantize_centi(t->velocity.y);
    o.footprint_radius = static_cast<std::uint16_t>(
        std::clamp(std::round(t->footprint_radius * 100.0), 0.0, 65535.0));
    o.classification = t->cls == ObjectClass::Pedestrian ? codec::ObjectClass::Pedestrian
                                                         : codec::ObjectClass::Unknown;
    o.confidence = t->confidence;
    e.payload.objects.push_back(o);
  }
  return e;
}

BusStopPipeline::BusStopPipeline(PipelineConfig config, geom::Vec2 sensor_position)
    : config_(config), sensor_position_(sensor_position), tracker_(config.tracker) {}

void BusStopPipeline::learn(std::span<const Scan> scans) {
  background_ = learn_background(scans, config_.cell_size, config_.min_learning_frames);
}

const std::vector<Track>& BusStopPipeline::process(const Scan& scan) {
  if (!ready()) throw std::logic_error("bus stop pipeline used before background learning");
  double dt = 0.1;
  if (last_time_) {
    dt = to_seconds(scan.sim_time - *last_time_);
    if (!(dt > 0.0)) throw NonPositiveDt("scan timestamps must be strictly increasing");
  }
  last_time_ = scan.sim_time;

  const auto foreground = subtract_background(scan, background_, config_.occupancy_threshold);
  last_detections_.clear();
  for (const auto& c : cluster(foreground, config_.cluster_eps, config_.cluster_min_pts)) {
    const auto cls = classify(c);
    last_detections_.push_back({sensor_position_ + c.centroid, cls.footprint_radius, cls.cls});
  }
  return tracker_.update(last_detections_, dt);
}

std::vector<Track> BusStopPipeline::confirmed_tracks() const {
  std::vector<Track> out;
  for (const auto& t : tracker_.tracks()) {
    if (t.status == TrackStatus::Confirmed) out.push_back(t);
  }
  return out;
}

std::size_t BusStopPipeline::pedestrian_count() const {
  std::size_t n = 0;
  for (const auto& t : tracker_.tracks()) {
    if (t.status == TrackStatus::Confirmed && t.cls == ObjectClass::Pedestrian) ++n;
  }
  return n;
}

namespace {

const char* label_name(PointLabel l) {
  switch (l) {
    case PointLabel::Background: return "background";
    case PointLabel::Pedestrian: return "pedestrian";
    case PointLabel::Other: return "other";
  }
  return "background";
}

PointLabel parse_label(const std::string& s) {
  if (s == "background") return PointLabel::Background;
  if (s == "pedestrian") return PointLabel::Pedestrian;
  if (s == "other") return PointLabel::Other;
  throw csv::ParseError("unknown point label '" + s + "'");
}

}  // namespace

void write_scans_csv(const std::filesystem::path& path, std::span<const Scan> scans) {
  csv::Table t;
  t.header = {"sim_time_ns", "point_index", "x_m", "y_m", "z_m", "label"};
  for (const auto& s : scans) {
    const std::string ts = std::to_string(s.sim_time);
    if (s.points.empty()) {
      t.rows.push_back({ts, "", "", "", "", ""});
      continue;
    }
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      const auto& p = s.points[i];
      t.rows.push_back({ts, std::to_string(i), csv::fixed(p.x, 3), csv::fixed(p.y, 3),
                        csv::fixed(p.z, 3), label_name(p.label)});
    }
  }
  csv::write_file(path, t);
}

std::vector<Scan> read_scans_csv(const std::filesystem::path& path, std::uint32_t sensor_id) {
  const auto t = csv::read_file(path);
  const std::vector<std::string> expected = {"sim_time_ns", "point_index", "x_m", "y_m", "z_m", "label"};
  if (t.header != expected) throw csv::ParseError(path.string() + ": unexpected scan header");
  std::vector<Scan> scans;
  for (const auto& row : t.rows) {
    const SimTime ts = csv::to_int(row[0]);
    if (scans.empty() || scans.back().sim_time != ts) {
      if (!scans.empty() && ts < scans.back().sim_time) {
        throw csv::ParseError(path.string() + ": scan timestamps not monotone");
      }
      scans.push_back({sensor_id, ts, {}});
    }
    if (row[1].empty()) continue;
    scans.back().points.push_back(
        {csv::to_double(row[2]), csv::to_double(row[3]), csv::to_double(row[4]), parse_label(row[5])});
  }
  return scans;
}

std::vector<ScanPoint> wall_points(geom::Vec2 a, geom::Vec2 b, double spacing,
                                   std::span<const double> heights) {
  std::vector<ScanPoint> out;
  const double len = geom::distance(a, b);
  const int steps = std::max(1, static_cast<int>(std::ceil(len / spacing)));
  for (int i = 0; i <= steps; ++i) {
    const geom::Vec2 p = a + (b - a) * (static_cast<double>(i) / steps);
    for (double z : heights) out.push_back({p.x, p.y, z, PointLabel::Background});
  }
  return out;
}

std::vector<ScanPoint> pedestrian_points(geom::Vec2 center, double radius, double height, int rings,
                                         int per_ring, double phase) {
  std::vector<ScanPoint> out;
  for (int r = 0; r < rings; ++r) {
    const double z = rings == 1 ? height : 0.2 + (height - 0.2) * r / (rings - 1);
    for (int k = 0; k < per_ring; ++k) {
      const double a = phase + 2.0 * std::numbers::pi * k / per_ring;
      out.push_back({center.x + radius * std::cos(a), center.y + radius * std::sin(a), z,
                     PointLabel::Pedestrian});
    }
  }
  return out;
}

std::vector<ScanPoint> vehicle_points(geom::Vec2 center, double radius, double height) {
  std::vector<ScanPoint> out;
  const int per_ring = std::max(8, static_cast<int>(std::ceil(2.0 * std::numbers::pi * radius / 0.3)));
  for (double z : {0.4, height * 0.5, height}) {
    for (int k = 0; k < per_ring; ++k) {
      const double a = 2.0 * std::numbers::pi * k / per_ring;
      out.push_back({center.x + radius * std::cos(a), center.y + radius * std::sin(a), z, PointLabel::Other});
    }
  }
  return out;
}

void clip_to_sensor(std::vector<ScanPoint>& points, double max_range, double sensor_height) {
  std::erase_if(points, [&](const ScanPoint& p) {
    return std::hypot(p.x, p.y) > max_range || p.z > sensor_height;
  });
}

}  // namespace v2xlab::perception
