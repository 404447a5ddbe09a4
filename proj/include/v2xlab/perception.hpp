#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "v2xlab/codec.hpp"
#include "v2xlab/geometry.hpp"
#include "v2xlab/time.hpp"

namespace v2xlab::perception {

enum class PointLabel : std::uint8_t { Background = 0, Pedestrian = 1, Other = 2 };

/// Ground-truth labels ride along for oracle tests only; the pipeline never reads them.
struct ScanPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  PointLabel label = PointLabel::Background;
  bool operator==(const ScanPoint&) const = default;
};

struct Scan {
  std::uint32_t sensor_id = 0;
  SimTime sim_time = 0;
  std::vector<ScanPoint> points;
  bool operator==(const Scan&) const = default;
};

struct CellKey {
  std::int32_t ix = 0;
  std::int32_t iy = 0;
  auto operator<=>(const CellKey&) const = default;
};

class InsufficientFrames : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Static occupancy grid learned from an empty scene.
class BackgroundModel {
 public:
  BackgroundModel() = default;
  BackgroundModel(double cell_size, std::map<CellKey, double> occupancy, std::size_t frames)
      : cell_size_(cell_size), occupancy_(std::move(occupancy)), frames_learned_(frames) {}

  double cell_size() const { return cell_size_; }
  std::size_t frames_learned() const { return frames_learned_; }
  const std::map<CellKey, double>& occupancy() const { return occupancy_; }

  CellKey cell_of(double x, double y) const;
  double ratio(double x, double y) const;

 private:
  double cell_size_ = 0.2;
  std::map<CellKey, double> occupancy_;
  std::size_t frames_learned_ = 0;
};

/// Occupancy ratio per cell = fraction of scans with at least one point in it.
BackgroundModel learn_background(std::span<const Scan> scans, double cell_size = 0.2,
                                 std::size_t min_frames = 50);

/// Keeps exactly the points whose cell ratio is below the threshold.
std::vector<ScanPoint> subtract_background(const Scan& scan, const BackgroundModel& model,
                                           double threshold = 0.5);

struct Cluster {
  std::vector<ScanPoint> points;
  geom::Vec2 centroid;
};

/// Single-linkage clustering in the horizontal plane; clusters smaller than
/// min_pts are dropped; output ordered by centroid x then y.
std::vector<Cluster> cluster(std::span<const ScanPoint> points, double eps = 0.4,
                             std::size_t min_pts = 5);

enum class ObjectClass : std::uint8_t { Pedestrian, Other };

struct ClassifiedObject {
  ObjectClass cls = ObjectClass::Other;
  double footprint_radius = 0.0;
  double height_span = 0.0;
};

ClassifiedObject classify(const Cluster& c);

struct Detection {
  geom::Vec2 position;
  double radius = 0.0;
  ObjectClass cls = ObjectClass::Other;
};

enum class TrackStatus : std::uint8_t { Tentative, Confirmed, Dead };

const char* to_string(TrackStatus s);

struct Track {
  std::uint16_t track_id = 0;
  geom::Vec2 position;
  geom::Vec2 velocity;
  double footprint_radius = 0.0;
  ObjectClass cls = ObjectClass::Other;
  std::uint8_t confidence = 0;
  std::uint32_t hits = 0;
  std::uint32_t misses = 0;
  TrackStatus status = TrackStatus::Tentative;
};

struct TrackerConfig {
  double gate = 1.0;
  double velocity_alpha = 0.5;
  std::uint32_t confirm_hits = 3;
  std::uint32_t delete_misses = 5;
};

class NonPositiveDt : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Constant-velocity tracker with greedy nearest-neighbour association.
class Tracker {
 public:
  explicit Tracker(TrackerConfig config = {}) : config_(config) {}

  /// Returns every track touched by this update, including ones that died in it.
  /// Dead tracks are dropped on the following update.
  const std::vector<Track>& update(std::span<const Detection> detections, double dt);

  const std::vector<Track>& tracks() const { return tracks_; }
  std::uint32_t tracks_created() const { return next_id_ - 1; }
  const TrackerConfig& config() const { return config_; }

 private:
  TrackerConfig config_;
  std::vector<Track> tracks_;
  std::uint32_t next_id_ = 1;
};

/// min(100, 20 * hits)
std::uint8_t track_confidence(std::uint32_t hits);

/// Round half away from zero to 0.01 units, saturating at the int16 range.
std::int16_t quantize_centi(double value);

struct CpmEmission {
  codec::CpmPayload payload;
  bool truncated = false;
};

struct StationAnchor {
  geom::Vec2 reference_enu;
  std::int32_t latitude = 0;
  std::int32_t longitude = 0;
};

/// Builds the CPM for the confirmed tracks; at most 128 objects, lowest ids first.
CpmEmission emit_cpm(const StationAnchor& station, std::span<const Track> tracks,
                     std::uint64_t reference_time_ms);

struct PipelineConfig {
  double cell_size = 0.2;
  double occupancy_threshold = 0.5;
  std::size_t min_learning_frames = 50;
  double cluster_eps = 0.4;
  std::size_t cluster_min_pts = 5;
  TrackerConfig tracker;
};

/// One bus stop's sequential pipeline: subtraction, clustering, classification, tracking.
class BusStopPipeline {
 public:
  BusStopPipeline(PipelineConfig config, geom::Vec2 sensor_position);

  void learn(std::span<const Scan> scans);
  bool ready() const { return background_.frames_learned() > 0; }

  /// Processes one scan (sensor frame) and returns the current tracks in ENU.
  const std::vector<Track>& process(const Scan& scan);

  std::vector<Track> confirmed_tracks() const;
  std::size_t pedestrian_count() const;
  const std::vector<Detection>& last_detections() const { return last_detections_; }
  const BackgroundModel& background() const { return background_; }
  geom::Vec2 sensor_position() const { return sensor_position_; }

 private:
  PipelineConfig config_;
  geom::Vec2 sensor_position_;
  BackgroundModel background_;
  Tracker tracker_;
  std::vector<Detection> last_detections_;
  std::optional<SimTime> last_time_;
};

// Scan replay CSV: sim_time_ns,point_index,x_m,y_m,z_m,label

void write_scans_csv(const std::filesystem::path& path, std::span<const Scan> scans);
std::vector<Scan> read_scans_csv(const std::filesystem::path& path, std::uint32_t sensor_id = 0);

// Synthetic scene generation in the sensor frame.

std::vector<ScanPoint> wall_points(geom::Vec2 a, geom::Vec2 b, double spacing,
                                   std::span<const double> heights);
std::vector<ScanPoint> pedestrian_points(geom::Vec2 center, double radius = 0.25,
                                         double height = 1.7, int rings = 4,
                                         int per_ring = 6, double phase = 0.0);
std::vector<ScanPoint> vehicle_points(geom::Vec2 center, double radius = 1.2,
                                      double height = 2.4);

/// Drops points outside the sensor envelope (horizontal range, above mount height).
void clip_to_sensor(std::vector<ScanPoint>& points, double max_range = 50.0,
                    double sensor_height = 3.0);

}  // namespace v2xlab::perception
