#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "v2xlab/codec.hpp"
#include "v2xlab/csv.hpp"
#include "v2xlab/time.hpp"

namespace v2xlab::data {

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using csv::ParseError;

// Files inside dataset/<date>/trip_<k>/ (relative paths).
namespace file {
inline constexpr std::string_view kPose = "shuttle/pose.csv";
inline constexpr std::string_view kCurrentMission = "shuttle/current_mission.csv";
inline constexpr std::string_view kPlannedTrajectory = "shuttle/planned_trajectory.csv";
inline constexpr std::string_view kVelocity = "shuttle/velocity.csv";
inline constexpr std::string_view kStateOfCharge = "shuttle/state_of_charge.csv";
inline constexpr std::string_view kDoorStatus = "shuttle/door_status.csv";
inline constexpr std::string_view kMissionProgress = "shuttle/mission_progress.csv";
inline constexpr std::string_view kDrivingStatus = "shuttle/driving_status.csv";
inline constexpr std::string_view kSteeringAngle = "shuttle/steering_angle.csv";
inline constexpr std::string_view kCam = "shuttle/cam.csv";
inline constexpr std::string_view kSpatem = "pedestrian_crossing/spatem.csv";
inline constexpr std::string_view kMapem = "pedestrian_crossing/mapem.csv";

std::string bus_stop_cpm(int stop);
std::string bus_stop_boxes(int stop);
std::string bus_stop_tracks(int stop);
}  // namespace file

inline constexpr int kBusStops = 2;

struct FileSchema {
  std::string path;
  std::vector<std::string> columns;
};

/// Every file of a trip, in a fixed order.
const std::vector<FileSchema>& trip_schemas();
const FileSchema& schema_for(std::string_view path);

/// Per-column renames applied before the schema check, for datasets written by
/// other tools. Keys are "<file path>:<foreign name>" or just "<foreign name>".
struct AliasTable {
  std::map<std::string, std::string> names;

  static AliasTable parse_yaml(const std::string& text);
  static AliasTable load(const std::filesystem::path& path);
  std::string canonical(std::string_view path, const std::string& column) const;
};

/// Strict: the header must start with the schema columns in order; extra
/// trailing columns are kept. With aliases the check is by name in any order,
/// and the table is reordered into canonical order with extras appended; the
/// CPM sequence and receive-stamp columns and the SPATEM mode column may then
/// be missing and stay absent.
csv::Table conform(const csv::Table& table, const FileSchema& schema, const AliasTable* aliases = nullptr);

struct TripRecord {
  std::string date;  // YYYY-MM-DD
  std::size_t index = 0;
  std::map<std::string, csv::Table> files;

  std::filesystem::path relative_dir() const;
  csv::Table& table(std::string_view path);
  const csv::Table& table(std::string_view path) const;
  bool operator==(const TripRecord&) const = default;
};

/// Headers only.
TripRecord empty_trip(std::string date, std::size_t index);

/// Writes below `dataset_root` (the directory that holds the date folders).
void write_trip(const std::filesystem::path& dataset_root, const TripRecord& trip);
TripRecord read_trip(const std::filesystem::path& trip_dir, const AliasTable* aliases = nullptr);

struct TripRef {
  std::string date;
  std::size_t index = 0;
  std::filesystem::path dir;
};

/// Trips sorted by date then index.
std::vector<TripRef> list_trips(const std::filesystem::path& dataset_root);

struct LayoutReport {
  std::size_t trips = 0;
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

/// Checks names and nesting, contiguous trip indices, schema headers and
/// monotone timestamps.
LayoutReport validate_layout(const std::filesystem::path& dataset_root);

struct DatasetInfo {
  std::size_t trips = 0;
  std::map<std::string, std::size_t> trips_per_date;
  double driving_seconds = 0.0;
  std::string summary() const;
};

DatasetInfo dataset_info(const std::filesystem::path& dataset_root);

/// UTC calendar date of an epoch time in milliseconds.
std::string date_of(std::uint64_t epoch_ms);

// Number formatting shared by all writers.
std::string fmt_ns(SimTime t);
std::string fmt_m(double v);    // 3 decimals
std::string fmt_rad(double v);  // 6 decimals

// Mission-triggered segmentation.

enum class CloseReason { Completed, MissionCleared, Overlap, EndOfStream };
const char* to_string(CloseReason r);

struct TripWindow {
  std::uint16_t mission_id = 0;
  SimTime start = 0;
  SimTime end = 0;
  CloseReason closed_by = CloseReason::EndOfStream;
};

struct SegmentEvent {
  enum class Kind { Open, Close };
  Kind kind = Kind::Open;
  SimTime at = 0;
  std::uint16_t mission_id = 0;
  CloseReason reason = CloseReason::Completed;  // Close only
  bool overlapping = false;
};

/// CAM-driven recorder state: a trip opens on the first CAM carrying a mission
/// after idle and closes when progress reaches 1000 or the mission is cleared.
/// A different mission id while open closes the old trip with an overlap flag.
class MissionSegmenter {
 public:
  std::vector<SegmentEvent> feed(SimTime at, const codec::CamPayload& cam);
  std::optional<SegmentEvent> finish(SimTime at);
  bool open() const { return open_.has_value(); }
  std::optional<std::uint16_t> mission() const { return open_; }

 private:
  std::optional<std::uint16_t> open_;
  std::optional<std::uint16_t> finished_;  // completed mission still being broadcast
};

std::vector<TripWindow> segment_trips(std::span<const std::pair<SimTime, codec::CamPayload>> stream);

}  // namespace v2xlab::data
