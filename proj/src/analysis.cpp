#include "v2xlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include "json.hpp"

namespace v2xlab::analysis {

namespace {

using json = nlohmann::json;

constexpr double kStill = 0.05;

std::int64_t ts_of(const std::vector<std::string>& row) { return csv::to_int(row.at(0)); }

std::string trip_name(const data::TripRecord& t) {
  return t.date + "/trip_" + std::to_string(t.index);
}

double pct(std::size_t lost, std::size_t sent) {
  return sent ? 100.0 * static_cast<double>(lost) / static_cast<double>(sent) : 0.0;
}

// Piecewise-linear shuttle position over pose.csv.
class PoseTrack {
 public:
  explicit PoseTrack(const csv::Table& pose) {
    for (const auto& r : pose.rows) {
      t_.push_back(ts_of(r));
      p_.push_back({csv::to_double(r[1]), csv::to_double(r[2])});
    }
  }
  bool empty() const { return t_.empty(); }
  geom::Vec2 at(std::int64_t t) const {
    const auto it = std::lower_bound(t_.begin(), t_.end(), t);
    if (it == t_.begin()) return p_.front();
    if (it == t_.end()) return p_.back();
    const auto i = static_cast<std::size_t>(it - t_.begin());
    if (t_[i] == t) return p_[i];
    const double f = static_cast<double>(t - t_[i - 1]) / static_cast<double>(t_[i] - t_[i - 1]);
    return p_[i - 1] + (p_[i] - p_[i - 1]) * f;
  }

 private:
  std::vector<std::int64_t> t_;
  std::vector<geom::Vec2> p_;
};

struct Message {
  std::int64_t tx = 0;
  bool received = false;
};

// (station, sequence) -> message, from one bus stop's CPM log.
void collect_messages(const csv::Table& cpm, std::map<std::pair<std::uint32_t, std::int64_t>, Message>& out) {
  const auto seq = cpm.column("sequence");
  const auto rx = cpm.column("rx_timestamp_ns");
  const auto station = cpm.column("station_id");
  if (!seq || !rx || !station) throw MissingSequenceColumn("cpm log lacks sequence, station_id or rx_timestamp_ns");
  for (const auto& r : cpm.rows) {
    auto& m = out[{static_cast<std::uint32_t>(csv::to_int(r[*station])), csv::to_int(r[*seq])}];
    m.tx = ts_of(r);
    if (!r[*rx].empty()) m.received = true;
  }
}

std::map<std::pair<std::uint32_t, std::int64_t>, Message> trip_messages(const data::TripRecord& trip) {
  std::map<std::pair<std::uint32_t, std::int64_t>, Message> msgs;
  for (int k = 0; k < data::kBusStops; ++k) collect_messages(trip.table(data::file::bus_stop_cpm(k)), msgs);
  return msgs;
}

TripLoss expected_count_loss(const data::TripRecord& trip) {
  TripLoss out;
  out.trip = trip_name(trip);
  out.lower_confidence = true;
  const auto& pose = trip.table(data::file::kPose);
  double duration = 0.0;
  if (pose.rows.size() > 1) duration = static_cast<double>(ts_of(pose.rows.back()) - ts_of(pose.rows.front())) / 1e9;
  const auto expected = static_cast<std::size_t>(std::floor(duration * 10.0 + 1e-9)) + (pose.rows.empty() ? 0 : 1);
  for (int k = 0; k < data::kBusStops; ++k) {
    const auto& cpm = trip.table(data::file::bus_stop_cpm(k));
    std::set<std::int64_t> stamps;
    for (const auto& r : cpm.rows) stamps.insert(ts_of(r));
    const auto id = sim::kBusStopStation0 + static_cast<std::uint32_t>(k);
    auto& st = out.stations[id];
    st.sent = std::max(expected, stamps.size());
    st.received = stamps.size();
    out.sent += st.sent;
    out.received += st.received;
  }
  out.loss_percent = pct(out.sent - out.received, out.sent);
  return out;
}

std::optional<std::int64_t> spatem_mode_column(const csv::Table& sp) {
  const auto c = sp.column("intersection_mode");
  if (!c) return std::nullopt;
  return static_cast<std::int64_t>(*c);
}

// Group state timeline of one signal group from spatem.csv.
std::vector<std::pair<std::int64_t, int>> group_states(const csv::Table& sp, int group) {
  const auto g = sp.require_column("signal_group");
  const auto e = sp.require_column("event_state");
  std::vector<std::pair<std::int64_t, int>> out;
  for (const auto& r : sp.rows) {
    if (csv::to_int(r[g]) != group) continue;
    out.emplace_back(ts_of(r), static_cast<int>(csv::to_int(r[e])));
  }
  return out;
}

template <class T>
const T* latest_at(const std::vector<std::pair<std::int64_t, T>>& v, std::int64_t t) {
  auto it = std::upper_bound(v.begin(), v.end(), t, [](std::int64_t x, const auto& p) { return x < p.first; });
  if (it == v.begin()) return nullptr;
  return &std::prev(it)->second;
}

crossing::Phase phase_from_crosswalk(int state) {
  switch (static_cast<codec::EventState>(state)) {
    case codec::EventState::ProtectedMovementAllowed: return crossing::Phase::PedGreen;
    case codec::EventState::ProtectedClearance: return crossing::Phase::PedClearance;
    default: return crossing::Phase::PedRed;
  }
}

json stats_json(const Stats& s) {
  return {{"n", s.n},           {"mean", s.mean}, {"median", s.median}, {"std", s.std},
          {"q1", s.q1},         {"q3", s.q3},     {"min", s.min},       {"max", s.max},
          {"outliers", s.outliers}, {"single_sample", s.single_sample}};
}

std::string num(double v) { return csv::fixed(v, 4); }

}  // namespace

double quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(q, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Stats describe(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("describe: empty sample");
  std::sort(values.begin(), values.end());
  Stats s;
  s.n = values.size();
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  s.median = quantile(values, 0.5);
  s.q1 = quantile(values, 0.25);
  s.q3 = quantile(values, 0.75);
  s.min = values.front();
  s.max = values.back();
  if (s.n == 1) {
    s.single_sample = true;
  } else {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  const double iqr = s.q3 - s.q1;
  for (double v : values) {
    if (v < s.q1 - 1.5 * iqr || v > s.q3 + 1.5 * iqr) s.outliers.push_back(v);
  }
  return s;
}

TripLoss trip_loss(const data::TripRecord& trip) {
  TripLoss out;
  out.trip = trip_name(trip);
  for (const auto& [key, m] : trip_messages(trip)) {
    auto& st = out.stations[key.first];
    ++st.sent;
    if (m.received) ++st.received;
    ++out.sent;
    if (m.received) ++out.received;
  }
  out.loss_percent = pct(out.sent - out.received, out.sent);
  return out;
}

LossReport package_loss(const std::filesystem::path& dataset_root, const LossOptions& options) {
  if (options.cell_size <= 0.0) throw std::invalid_argument("cell size must be positive");
  LossReport rep;
  rep.cell_size = options.cell_size;
  for (const auto& z : options.zones) rep.zones.push_back({z.name, 0, 0, 0.0});
  for (const auto& ref : data::list_trips(dataset_root)) {
    const auto trip = data::read_trip(ref.dir, options.aliases);
    std::map<std::pair<std::uint32_t, std::int64_t>, Message> msgs;
    try {
      msgs = trip_messages(trip);
    } catch (const MissingSequenceColumn&) {
      auto tl = expected_count_loss(trip);
      rep.sent += tl.sent;
      rep.lost += tl.sent - tl.received;
      rep.trips.push_back(std::move(tl));
      continue;
    }
    TripLoss tl;
    tl.trip = trip_name(trip);
    const PoseTrack pose(trip.table(data::file::kPose));
    for (const auto& [key, m] : msgs) {
      auto& st = tl.stations[key.first];
      ++st.sent;
      ++tl.sent;
      if (m.received) {
        ++st.received;
        ++tl.received;
      }
      if (pose.empty()) continue;
      const auto p = pose.at(m.tx);
      const CellKey ck{static_cast<std::int64_t>(std::floor(p.x / options.cell_size)),
                       static_cast<std::int64_t>(std::floor(p.y / options.cell_size))};
      auto& cell = rep.heatmap[ck];
      ++cell.sent;
      if (!m.received) ++cell.lost;
      for (std::size_t z = 0; z < options.zones.size(); ++z) {
        if (!geom::point_in_polygon(p, options.zones[z].polygon)) continue;
        ++rep.zones[z].sent;
        if (!m.received) ++rep.zones[z].lost;
      }
    }
    tl.loss_percent = pct(tl.sent - tl.received, tl.sent);
    rep.sent += tl.sent;
    rep.lost += tl.sent - tl.received;
    rep.trips.push_back(std::move(tl));
  }
  rep.loss_percent = pct(rep.lost, rep.sent);
  for (auto& z : rep.zones) z.loss_percent = pct(z.lost, z.sent);
  double best = -1.0;
  for (const auto& [k, c] : rep.heatmap) {
    if (c.sent < options.min_cell_samples) continue;
    if (c.rate() > best) {
      best = c.rate();
      rep.max_cell = k;
    }
  }
  return rep;
}

TripTime trip_time(const data::TripRecord& trip) {
  TripTime out;
  out.trip = trip_name(trip);
  const auto& drive = trip.table(data::file::kDrivingStatus);
  std::optional<std::int64_t> first, last;
  for (const auto& r : drive.rows) {
    if (r[1] != "autonomous") continue;
    if (!first) first = ts_of(r);
    last = ts_of(r);
  }
  if (!first) throw sim::IncompleteTrip(out.trip + ": no autonomous driving");
  const auto& prog = trip.table(data::file::kMissionProgress);
  std::vector<std::pair<std::int64_t, std::int64_t>> progress;
  bool done = false;
  for (const auto& r : prog.rows) {
    progress.emplace_back(ts_of(r), csv::to_int(r[2]));
    if (progress.back().second >= 1000) done = true;
  }
  if (!done) throw sim::IncompleteTrip(out.trip + ": mission never completed");
  const auto& sp = trip.table(data::file::kSpatem);
  if (sp.rows.empty()) throw sim::IncompleteTrip(out.trip + ": no SPATEM rows");

  bool have_dir = false;
  for (const auto& r : trip.table(data::file::kCurrentMission).rows) {
    if (r[1] == "0" || r[2].empty()) continue;
    out.direction = shuttle::parse_direction(r[2]);
    have_dir = true;
    break;
  }
  if (!have_dir) throw sim::IncompleteTrip(out.trip + ": no mission direction");

  const auto mode_col = spatem_mode_column(sp);
  if (mode_col && !sp.rows.front()[static_cast<std::size_t>(*mode_col)].empty()) {
    out.mode = crossing::parse_mode(sp.rows.front()[static_cast<std::size_t>(*mode_col)]);
  } else {
    // Without the mode column: a standstill on a stop signal away from the
    // platforms only happens when pedestrians have priority.
    out.mode_inferred = true;
    out.mode = crossing::Mode::ShuttlePriority;
    const auto lane = group_states(sp, crossing::kShuttleSignalGroup);
    bool moved = false;
    for (const auto& r : trip.table(data::file::kVelocity).rows) {
      const auto t = ts_of(r);
      if (t < *first || t > *last) continue;
      const double v = csv::to_double(r[1]);
      if (v > kStill) {
        moved = true;
        continue;
      }
      if (!moved) continue;
      const auto* pr = latest_at(progress, t);
      if (pr && *pr >= 1000) continue;
      const auto* st = latest_at(lane, t);
      if (st && *st == static_cast<int>(codec::EventState::StopAndRemain)) {
        out.mode = crossing::Mode::PedestrianPriority;
        break;
      }
    }
  }
  out.seconds = static_cast<double>(*last - *first) / 1e9;
  return out;
}

TravelTimeReport travel_times(std::span<const TripTime> trips, std::size_t excluded) {
  TravelTimeReport rep;
  rep.trips.assign(trips.begin(), trips.end());
  rep.excluded = excluded;
  std::map<std::pair<shuttle::Direction, crossing::Mode>, std::vector<double>> groups;
  std::vector<double> all;
  for (const auto& t : trips) {
    groups[{t.direction, t.mode}].push_back(t.seconds);
    all.push_back(t.seconds);
  }
  for (auto& [k, v] : groups) rep.groups[k] = describe(std::move(v));
  if (!all.empty()) rep.overall = describe(std::move(all));
  return rep;
}

TravelTimeReport travel_times(const std::filesystem::path& dataset_root, const data::AliasTable* aliases) {
  std::vector<TripTime> times;
  std::vector<std::string> excluded;
  for (const auto& ref : data::list_trips(dataset_root)) {
    const auto trip = data::read_trip(ref.dir, aliases);
    try {
      times.push_back(trip_time(trip));
    } catch (const sim::IncompleteTrip&) {
      excluded.push_back(trip_name(trip));
    }
  }
  auto rep = travel_times(times, excluded.size());
  rep.excluded_trips = std::move(excluded);
  return rep;
}

ComplianceReport non_compliance(const sim::RunLog& log) {
  if (log.trace.empty()) throw NoPhaseLog("run log has no traced ticks");
  ComplianceReport rep;
  std::unordered_map<std::uint32_t, std::size_t> open;  // pedestrian -> incident index
  std::set<std::uint32_t> inside_now;
  for (const auto& tick : log.trace) {
    std::set<std::uint32_t> inside;
    const bool red = tick.phase == crossing::Phase::PedRed;
    const bool near =
        !log.conflict_zone.empty() &&
        geom::distance_to_polygon(tick.shuttle_pose.position, log.conflict_zone) <= kIncidentRange;
    if (red && near && tick.shuttle_rendered) {
      for (const auto& p : tick.pedestrians) {
        if (!p.in_zone) continue;
        inside.insert(p.id);
        if (auto it = open.find(p.id); it != open.end() && inside_now.contains(p.id)) {
          rep.incidents[it->second].end = tick.t;
        } else {
          open[p.id] = rep.incidents.size();
          rep.incidents.push_back({p.id, tick.trip, tick.t, tick.t});
        }
      }
    }
    inside_now = std::move(inside);
  }
  for (const auto& t : log.trips) rep.crossings += t.zone_entries;
  rep.rate = rep.crossings ? static_cast<double>(rep.incidents.size()) / static_cast<double>(rep.crossings) : 0.0;
  std::set<std::size_t> trips;
  for (const auto& i : rep.incidents) {
    if (i.trip >= 0) trips.insert(static_cast<std::size_t>(i.trip));
  }
  std::vector<double> delays;
  for (auto k : trips) {
    if (k >= log.trips.size()) continue;
    try {
      const double d = sim::measure_stop_delay(log, k);
      rep.trip_delays[k] = d;
      rep.max_delay = std::max(rep.max_delay, d);
      delays.push_back(d);
    } catch (const sim::IncompleteTrip&) {
    }
  }
  if (!delays.empty()) rep.delay_stats = describe(std::move(delays));
  return rep;
}

sim::RunLog run_log_from_dataset(const std::filesystem::path& dataset_root, const geo::GeoAnchor& anchor,
                                 std::optional<geom::Polygon> zone, const data::AliasTable* aliases) {
  sim::RunLog log;
  if (zone) log.conflict_zone = *zone;
  for (const auto& ref : data::list_trips(dataset_root)) {
    const auto trip = data::read_trip(ref.dir, aliases);
    const int ti = static_cast<int>(log.trips.size());

    if (log.conflict_zone.empty()) {
      const auto& map = trip.table(data::file::kMapem);
      std::optional<std::int64_t> seq;
      for (const auto& r : map.rows) {
        if (csv::to_int(r[6]) != static_cast<int>(codec::LaneType::Crosswalk)) continue;
        if (seq && csv::to_int(r[1]) != *seq) break;
        seq = csv::to_int(r[1]);
        const auto refp = anchor.to_enu_e7(static_cast<std::int32_t>(csv::to_int(r[3])),
                                           static_cast<std::int32_t>(csv::to_int(r[4])));
        log.conflict_zone.push_back(refp + geom::Vec2{csv::to_double(r[9]) / 100.0, csv::to_double(r[10]) / 100.0});
      }
    }

    const auto& sp = trip.table(data::file::kSpatem);
    const auto walk = group_states(sp, crossing::kCrosswalkSignalGroup);
    std::vector<std::pair<std::int64_t, crossing::Mode>> modes;
    if (const auto mc = sp.column("intersection_mode")) {
      for (const auto& r : sp.rows) {
        if (!r[*mc].empty()) modes.emplace_back(ts_of(r), crossing::parse_mode(r[*mc]));
      }
    }

    std::map<std::int64_t, double> speed;
    for (const auto& r : trip.table(data::file::kVelocity).rows) speed[ts_of(r)] = csv::to_double(r[1]);

    // Confirmed pedestrian tracks per timestamp; stop 1 duplicates of stop 0 are dropped.
    std::map<std::int64_t, std::vector<sim::PedSnapshot>> peds;
    for (int k = 0; k < data::kBusStops; ++k) {
      for (const auto& r : trip.table(data::file::bus_stop_tracks(k)).rows) {
        if (r[7] != "pedestrian" || r[9] != "confirmed") continue;
        sim::PedSnapshot p;
        p.id = static_cast<std::uint32_t>((k + 1) * 1'000'000 + csv::to_int(r[1]));
        p.position = {csv::to_double(r[2]), csv::to_double(r[3])};
        p.state = sim::PedState::Crossing;
        auto& at = peds[ts_of(r)];
        const bool dup = std::any_of(at.begin(), at.end(), [&](const sim::PedSnapshot& q) {
          return q.id / 1'000'000 != p.id / 1'000'000 && geom::distance(q.position, p.position) < 1.0;
        });
        if (!dup) at.push_back(p);
      }
    }

    sim::TripSummary sum;
    sum.index = log.trips.size();
    for (const auto& r : trip.table(data::file::kCurrentMission).rows) {
      if (r[1] == "0" || r[2].empty()) continue;
      sum.mission_id = static_cast<std::uint16_t>(csv::to_int(r[1]));
      sum.direction = shuttle::parse_direction(r[2]);
      break;
    }
    if (!modes.empty()) sum.mode = modes.front().second;
    for (const auto& r : trip.table(data::file::kMissionProgress).rows) {
      if (csv::to_int(r[2]) >= 1000) {
        sum.completed_at = ts_of(r);
        break;
      }
    }

    bool was_in = false;
    bool first = true;
    for (const auto& r : trip.table(data::file::kPose).rows) {
      sim::TraceTick tick;
      tick.t = ts_of(r);
      tick.trip = ti;
      tick.shuttle_pose = {{csv::to_double(r[1]), csv::to_double(r[2])}, csv::to_double(r[3])};
      if (auto it = speed.find(tick.t); it != speed.end()) tick.shuttle_speed = it->second;
      tick.shuttle_in_zone =
          !log.conflict_zone.empty() && geom::point_in_polygon(tick.shuttle_pose.position, log.conflict_zone);
      if (tick.shuttle_in_zone && !was_in) ++sum.zone_entries;
      was_in = tick.shuttle_in_zone;
      if (const auto* st = latest_at(walk, tick.t)) tick.phase = phase_from_crosswalk(*st);
      if (const auto* m = latest_at(modes, tick.t)) tick.mode = *m;
      if (auto it = peds.find(tick.t); it != peds.end()) {
        tick.pedestrians = it->second;
        for (auto& p : tick.pedestrians) {
          p.in_zone = !log.conflict_zone.empty() && geom::point_in_polygon(p.position, log.conflict_zone);
        }
      }
      if (first) sum.dispatched_at = tick.t;
      if (first || log.phase_log.empty() || log.phase_log.back().phase != tick.phase) {
        log.phase_log.push_back({tick.t, tick.phase});
      }
      if (first || log.mode_log.empty() || log.mode_log.back().second != tick.mode) {
        log.mode_log.emplace_back(tick.t, tick.mode);
      }
      first = false;
      log.trace.push_back(std::move(tick));
    }
    log.trips.push_back(sum);
  }
  return log;
}

crossing::RedTimeResult red_fraction(const sim::RunLog& log) {
  if (log.trace.empty()) throw NoPhaseLog("run log has no traced ticks");
  std::vector<std::int64_t> gaps;
  for (std::size_t i = 1; i < log.trace.size(); ++i) gaps.push_back(log.trace[i].t - log.trace[i - 1].t);
  std::int64_t nominal = from_millis(100);
  if (!gaps.empty()) {
    auto sorted = gaps;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
    nominal = std::max<std::int64_t>(sorted[sorted.size() / 2], 1);
  }
  crossing::RedTimeResult r;
  for (std::size_t i = 0; i < log.trace.size(); ++i) {
    std::int64_t dt = nominal;
    if (i + 1 < log.trace.size() && gaps[i] > 0 && gaps[i] <= 2 * nominal) dt = gaps[i];
    const double s = to_seconds(dt);
    r.horizon_seconds += s;
    if (log.trace[i].phase != crossing::Phase::PedGreen) r.red_seconds += s;
  }
  r.fraction_immediate_cross = r.horizon_seconds > 0 ? 1.0 - r.red_seconds / r.horizon_seconds : 1.0;
  return r;
}

std::string to_json(const LossReport& r) {
  json j;
  j["sent"] = r.sent;
  j["lost"] = r.lost;
  j["loss_percent"] = r.loss_percent;
  j["cell_size"] = r.cell_size;
  j["trips"] = json::array();
  for (const auto& t : r.trips) {
    json s = json::object();
    for (const auto& [id, st] : t.stations) s[std::to_string(id)] = {{"sent", st.sent}, {"received", st.received}};
    j["trips"].push_back({{"trip", t.trip},
                          {"sent", t.sent},
                          {"received", t.received},
                          {"loss_percent", t.loss_percent},
                          {"lower_confidence", t.lower_confidence},
                          {"stations", s}});
  }
  j["zones"] = json::array();
  for (const auto& z : r.zones) {
    j["zones"].push_back({{"name", z.name}, {"sent", z.sent}, {"lost", z.lost}, {"loss_percent", z.loss_percent}});
  }
  j["heatmap"] = json::array();
  for (const auto& [k, c] : r.heatmap) {
    const auto ctr = r.cell_center(k);
    j["heatmap"].push_back(
        {{"ix", k.ix}, {"iy", k.iy}, {"x", ctr.x}, {"y", ctr.y}, {"sent", c.sent}, {"lost", c.lost}, {"rate", c.rate()}});
  }
  if (r.max_cell) {
    const auto ctr = r.cell_center(*r.max_cell);
    j["max_cell"] = {{"ix", r.max_cell->ix}, {"iy", r.max_cell->iy}, {"x", ctr.x}, {"y", ctr.y},
                     {"rate", r.heatmap.at(*r.max_cell).rate()}};
  } else {
    j["max_cell"] = nullptr;
  }
  return j.dump(2);
}

std::string to_json(const TravelTimeReport& r) {
  json j;
  j["trips"] = json::array();
  for (const auto& t : r.trips) {
    j["trips"].push_back({{"trip", t.trip},
                          {"direction", shuttle::to_string(t.direction)},
                          {"mode", crossing::to_string(t.mode)},
                          {"mode_inferred", t.mode_inferred},
                          {"seconds", t.seconds}});
  }
  j["groups"] = json::array();
  for (const auto& [k, s] : r.groups) {
    auto g = stats_json(s);
    g["direction"] = shuttle::to_string(k.first);
    g["mode"] = crossing::to_string(k.second);
    j["groups"].push_back(g);
  }
  j["overall"] = r.overall ? stats_json(*r.overall) : json(nullptr);
  j["excluded"] = r.excluded;
  j["excluded_trips"] = r.excluded_trips;
  return j.dump(2);
}

std::string to_json(const ComplianceReport& r) {
  json j;
  j["incidents"] = json::array();
  for (const auto& i : r.incidents) {
    j["incidents"].push_back({{"pedestrian", i.pedestrian},
                              {"trip", i.trip},
                              {"start_ns", i.start},
                              {"end_ns", i.end}});
  }
  j["incident_count"] = r.incidents.size();
  j["crossings"] = r.crossings;
  j["rate"] = r.rate;
  json d = json::object();
  for (const auto& [k, v] : r.trip_delays) d[std::to_string(k)] = v;
  j["trip_delays"] = d;
  j["max_delay"] = r.max_delay;
  j["delay_stats"] = r.delay_stats ? stats_json(*r.delay_stats) : json(nullptr);
  return j.dump(2);
}

std::string to_json(const crossing::RedTimeResult& r) {
  json j{{"red_seconds", r.red_seconds},
         {"horizon_seconds", r.horizon_seconds},
         {"red_fraction", r.horizon_seconds > 0 ? r.red_seconds / r.horizon_seconds : 0.0},
         {"fraction_immediate_cross", r.fraction_immediate_cross}};
  return j.dump(2);
}

csv::Table to_csv(const LossReport& r) {
  csv::Table t;
  t.header = {"ix", "iy", "x_m", "y_m", "sent", "lost", "loss_rate"};
  for (const auto& [k, c] : r.heatmap) {
    const auto ctr = r.cell_center(k);
    t.rows.push_back({std::to_string(k.ix), std::to_string(k.iy), csv::fixed(ctr.x, 2), csv::fixed(ctr.y, 2),
                      std::to_string(c.sent), std::to_string(c.lost), num(c.rate())});
  }
  return t;
}

csv::Table to_csv(const TravelTimeReport& r) {
  csv::Table t;
  t.header = {"direction", "mode", "n", "mean", "median", "std", "q1", "q3", "min", "max", "outliers"};
  auto row = [&](const std::string& d, const std::string& m, const Stats& s) {
    t.rows.push_back({d, m, std::to_string(s.n), num(s.mean), num(s.median), num(s.std), num(s.q1), num(s.q3),
                      num(s.min), num(s.max), std::to_string(s.outliers.size())});
  };
  for (const auto& [k, s] : r.groups) row(shuttle::to_string(k.first), crossing::to_string(k.second), s);
  if (r.overall) row("all", "all", *r.overall);
  return t;
}

csv::Table to_csv(const ComplianceReport& r) {
  csv::Table t;
  t.header = {"pedestrian", "trip", "start_ns", "end_ns", "trip_delay_s"};
  for (const auto& i : r.incidents) {
    std::string delay;
    if (i.trip >= 0) {
      if (auto it = r.trip_delays.find(static_cast<std::size_t>(i.trip)); it != r.trip_delays.end()) {
        delay = num(it->second);
      }
    }
    t.rows.push_back({std::to_string(i.pedestrian), std::to_string(i.trip), std::to_string(i.start),
                      std::to_string(i.end), delay});
  }
  return t;
}

csv::Table to_csv(const crossing::RedTimeResult& r) {
  csv::Table t;
  t.header = {"red_seconds", "horizon_seconds", "red_fraction", "fraction_immediate_cross"};
  t.rows.push_back({num(r.red_seconds), num(r.horizon_seconds),
                    num(r.horizon_seconds > 0 ? r.red_seconds / r.horizon_seconds : 0.0),
                    num(r.fraction_immediate_cross)});
  return t;
}

}  // namespace v2xlab::analysis
