#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "v2xlab/crossing.hpp"
#include "v2xlab/csv.hpp"
#include "v2xlab/datastore.hpp"
#include "v2xlab/geo.hpp"
#include "v2xlab/geometry.hpp"
#include "v2xlab/shuttle.hpp"
#include "v2xlab/simcore.hpp"

namespace v2xlab::analysis {

class MissingSequenceColumn : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NoPhaseLog : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Descriptive statistics.

struct Stats {
  std::size_t n = 0;
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;  // sample (n - 1); 0 with single_sample set when n == 1
  double q1 = 0.0;
  double q3 = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<double> outliers;  // beyond 1.5 IQR from the quartiles
  bool single_sample = false;
};

/// Linear interpolation between closest ranks on sorted input, q in [0, 1].
double quantile(std::span<const double> sorted, double q);
/// Throws std::invalid_argument on empty input.
Stats describe(std::vector<double> values);

// Package loss.

struct NamedZone {
  std::string name;
  geom::Polygon polygon;
};

struct LossOptions {
  double cell_size = 5.0;
  std::size_t min_cell_samples = 50;  // cells below this are ignored when picking the maximum
  std::vector<NamedZone> zones;
  const data::AliasTable* aliases = nullptr;
};

struct StationLoss {
  std::size_t sent = 0;
  std::size_t received = 0;
};

struct TripLoss {
  std::string trip;  // <date>/trip_<k>
  std::map<std::uint32_t, StationLoss> stations;
  std::size_t sent = 0;
  std::size_t received = 0;
  double loss_percent = 0.0;
  bool lower_confidence = false;  // expected-count fallback
};

struct CellKey {
  std::int64_t ix = 0;
  std::int64_t iy = 0;
  auto operator<=>(const CellKey&) const = default;
};

struct HeatCell {
  std::size_t sent = 0;
  std::size_t lost = 0;
  double rate() const { return sent ? static_cast<double>(lost) / static_cast<double>(sent) : 0.0; }
};

struct ZoneLoss {
  std::string name;
  std::size_t sent = 0;
  std::size_t lost = 0;
  double loss_percent = 0.0;
};

struct LossReport {
  std::vector<TripLoss> trips;
  double cell_size = 5.0;
  std::map<CellKey, HeatCell> heatmap;
  std::size_t sent = 0;
  std::size_t lost = 0;
  double loss_percent = 0.0;
  std::vector<ZoneLoss> zones;
  std::optional<CellKey> max_cell;  // highest loss rate among well-sampled cells

  geom::Vec2 cell_center(const CellKey& k) const {
    return {(static_cast<double>(k.ix) + 0.5) * cell_size, (static_cast<double>(k.iy) + 0.5) * cell_size};
  }
};

/// Per-message loss of one trip from the tx-side CPM logs and their receive
/// stamps at the shuttle. Throws MissingSequenceColumn when messages cannot be
/// identified.
TripLoss trip_loss(const data::TripRecord& trip);

/// Falls back to the expected-count method (duration x 10 Hz per station) for
/// trips without a sequence column; those are flagged lower-confidence and
/// contribute nothing to the heatmap.
LossReport package_loss(const std::filesystem::path& dataset_root, const LossOptions& options = {});

// Travel times.

struct TripTime {
  std::string trip;
  shuttle::Direction direction = shuttle::Direction::Outbound;
  crossing::Mode mode = crossing::Mode::ShuttlePriority;
  bool mode_inferred = false;
  double seconds = 0.0;
};

struct TravelTimeReport {
  std::vector<TripTime> trips;
  std::map<std::pair<shuttle::Direction, crossing::Mode>, Stats> groups;
  std::optional<Stats> overall;
  std::size_t excluded = 0;
  std::vector<std::string> excluded_trips;
};

/// Throws simcore's IncompleteTrip when the trip never reached progress 1000
/// or has no autonomous driving or SPATEM rows.
TripTime trip_time(const data::TripRecord& trip);
TravelTimeReport travel_times(const std::filesystem::path& dataset_root, const data::AliasTable* aliases = nullptr);
TravelTimeReport travel_times(std::span<const TripTime> trips, std::size_t excluded = 0);

// Non-compliance.

struct Incident {
  std::uint32_t pedestrian = 0;
  int trip = -1;
  SimTime start = 0;
  SimTime end = 0;  // last tick inside
};

struct ComplianceReport {
  std::vector<Incident> incidents;
  std::size_t crossings = 0;  // shuttle passages through the conflict zone
  double rate = 0.0;          // incidents / crossings
  std::map<std::size_t, double> trip_delays;  // trips with incidents
  double max_delay = 0.0;
  std::optional<Stats> delay_stats;
};

inline constexpr double kIncidentRange = 30.0;

/// Incident: a pedestrian inside the conflict zone while the crosswalk shows
/// stop and the shuttle is within 30 m of the zone. Throws NoPhaseLog.
ComplianceReport non_compliance(const sim::RunLog& log);

/// Rebuilds a run log from a recorded dataset: shuttle pose and speed, the
/// crossing phase from SPATEM, the zone from MAPEM and pedestrians from the
/// bus stops' confirmed tracks.
/// MAPEM node offsets are placed with `anchor`; `zone` overrides the MAPEM outline.
sim::RunLog run_log_from_dataset(const std::filesystem::path& dataset_root, const geo::GeoAnchor& anchor,
                                 std::optional<geom::Polygon> zone = std::nullopt,
                                 const data::AliasTable* aliases = nullptr);

/// Red-time fraction over the traced ticks; gaps between recordings are skipped.
/// Throws NoPhaseLog.
crossing::RedTimeResult red_fraction(const sim::RunLog& log);

// Report rendering.

std::string to_json(const LossReport& r);
std::string to_json(const TravelTimeReport& r);
std::string to_json(const ComplianceReport& r);
std::string to_json(const crossing::RedTimeResult& r);

csv::Table to_csv(const LossReport& r);  // heatmap cells
csv::Table to_csv(const TravelTimeReport& r);
csv::Table to_csv(const ComplianceReport& r);
csv::Table to_csv(const crossing::RedTimeResult& r);

}  // namespace v2xlab::analysis
