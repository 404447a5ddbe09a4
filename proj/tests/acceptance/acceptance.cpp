// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit on any failure.
// Usage: acceptance [criterion...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "random_messages.hpp"
#include "v2xlab/analysis.hpp"
#include "v2xlab/codec.hpp"
#include "v2xlab/crossing.hpp"
#include "v2xlab/datastore.hpp"
#include "v2xlab/perception.hpp"
#include "v2xlab/simcore.hpp"

using namespace v2xlab;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr std::size_t kCodecPerType = 10'000;
constexpr std::size_t kFuzzInputs = 100'000;
constexpr double kCodecBudget = 30.0;
constexpr double kGlassLoss = 20.0;
constexpr double kGlassTolerance = 1.5;
constexpr std::size_t kGlassMinMessages = 5000;
constexpr double kLossBudget = 60.0;
constexpr double kRedImmediate = 94.69;
constexpr double kRedReported = 94.6;
constexpr double kRedTolerance = 0.1;
constexpr std::size_t kTripsPerCell = 30;
constexpr double kTravelBudget = 300.0;
constexpr double kIncidentRate = 0.30;
constexpr double kIncidentSigmas = 3.0;
constexpr std::size_t kMinCrossings = 200;
constexpr double kScriptedDelay = 40.0;
constexpr int kSafetySeeds = 10;
constexpr int kPerceptionScenes = 100;
constexpr double kSeparation = 1.0;
constexpr int kMinPresence = 3;
constexpr double kMatchRadius = 0.5;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("v2xlab_acc_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scenario_path(const std::string& name) { return fs::path(V2XLAB_SOURCE_DIR) / "scenarios" / name; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string f2(double v) { return csv::fixed(v, 2); }

void codec_roundtrip(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  testing::MessageGen gen(2024);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < 4 * kCodecPerType; ++i) {
    const auto m = gen.message(static_cast<int>(i));
    try {
      if (codec::decode(codec::encode(m)) != m) ++mismatches;
    } catch (const std::exception&) {
      ++mismatches;
    }
  }
  std::size_t decoded = 0;
  std::size_t rejected = 0;
  std::size_t unexpected = 0;
  // Half uniformly random strings, half valid encodings with random damage.
  for (std::size_t i = 0; i < kFuzzInputs; ++i) {
    auto b = gen.bytes(i % 100 == 0 ? 4096 : 96);
    if (i % 2 == 1) {
      b = codec::encode(gen.message(static_cast<int>(i / 2)));
      const auto flips = gen.uni<int>(1, 4);
      for (int f = 0; f < flips && !b.empty(); ++f) b[gen.uni<std::size_t>(0, b.size() - 1)] ^= gen.uni<std::uint8_t>(1, 255);
      if (gen.uni<int>(0, 3) == 0) b.resize(gen.uni<std::size_t>(0, b.size()));
    }
    try {
      const auto m = codec::decode(b);
      ++decoded;
      if (codec::encode(m) != b) ++unexpected;
    } catch (const codec::DecodeError&) {
      ++rejected;
    } catch (...) {
      ++unexpected;
    }
  }
  const double elapsed = seconds_since(t0);
  o.detail << kCodecPerType << " messages per type, " << mismatches << " mismatches; " << kFuzzInputs
           << " fuzz inputs, " << rejected << " rejected, " << decoded << " decoded, " << unexpected
           << " unexpected; " << f2(elapsed) << " s";
  o.require(mismatches == 0, "round trip");
  o.require(unexpected == 0, "fuzz");
  o.require(elapsed < kCodecBudget, "runtime");
}

void loss_fidelity(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = sim::load_scenario(scenario_path("glass-loss.yaml"));
  TempDir dir("loss");
  {
    sim::Simulation s(cfg, dir.path);
    s.run();
  }
  analysis::LossOptions opt;
  for (const auto& ob : cfg.map.obstructions) opt.zones.push_back({ob.name, ob.polygon});
  const auto r = analysis::package_loss(dir.path / "dataset", opt);
  const double elapsed = seconds_since(t0);
  if (r.zones.size() != 1 || cfg.map.obstructions.size() != 1) {
    o.require(false, "scenario must define exactly one obstruction");
    return;
  }
  const auto& z = r.zones[0];
  o.detail << z.sent << " obstructed messages, " << f2(z.loss_percent) << " % lost (overall " << f2(r.loss_percent)
           << " % of " << r.sent << ")";
  o.require(z.sent >= kGlassMinMessages, "too few obstructed messages");
  o.require(std::abs(z.loss_percent - kGlassLoss) <= kGlassTolerance, "zone loss outside 20 +- 1.5 %");
  if (r.max_cell) {
    const auto c = r.cell_center(*r.max_cell);
    const bool inside = geom::point_in_polygon(c, cfg.map.obstructions[0].polygon);
    o.detail << ", worst cell (" << f2(c.x) << ", " << f2(c.y) << ") " << (inside ? "inside" : "outside") << " the zone";
    o.require(inside, "worst cell outside the zone");
  } else {
    o.require(false, "no worst cell");
  }
  o.detail << "; " << f2(elapsed) << " s";
  o.require(elapsed < kLossBudget, "runtime");
}

void red_fraction(Outcome& o) {
  const SimTime horizon = from_seconds(19 * 3600 + 56 * 60);
  const SimTime red_start = from_seconds(2 * 3600);
  const SimTime red_end = red_start + from_seconds(63 * 60 + 33);
  const std::vector<crossing::PhaseLogEntry> log{{0, crossing::Phase::PedGreen},
                                                 {red_start, crossing::Phase::PedClearance},
                                                 {red_start + from_seconds(4), crossing::Phase::PedRed},
                                                 {red_end, crossing::Phase::PedGreen}};
  const auto r = crossing::red_time_fraction(log, 0, horizon);
  const double pct = 100.0 * r.fraction_immediate_cross;
  o.detail << "red " << f2(r.red_seconds) << " s of " << f2(r.horizon_seconds) << " s, immediate crossing "
           << csv::fixed(pct, 3) << " %";
  o.require(std::abs(pct - kRedImmediate) < 0.005, "not 94.69 %");
  o.require(std::abs(pct - kRedReported) <= kRedTolerance + 1e-9, "more than 0.1 pp from 94.6 %");
}

analysis::TravelTimeReport travel_run(const sim::ScenarioConfig& cfg, const fs::path& dir) {
  sim::Simulation s(cfg, dir);
  s.run();
  return analysis::travel_times(dir / "dataset");
}

void travel_structure(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = sim::load_scenario(scenario_path("travel-matrix.yaml"));
  TempDir a("travel_a");
  TempDir b("travel_b");
  const auto r = travel_run(cfg, a.path);
  const auto again = travel_run(cfg, b.path);
  const double elapsed = seconds_since(t0);

  using D = shuttle::Direction;
  using M = crossing::Mode;
  auto mean = [&](D d, M m) -> std::optional<double> {
    const auto it = r.groups.find({d, m});
    if (it == r.groups.end()) return std::nullopt;
    o.require(it->second.n >= kTripsPerCell, std::string("fewer than 30 trips in ") + shuttle::to_string(d) + " " +
                                                 crossing::to_string(m));
    return it->second.mean;
  };
  const auto os = mean(D::Outbound, M::ShuttlePriority);
  const auto op = mean(D::Outbound, M::PedestrianPriority);
  const auto rs = mean(D::Return, M::ShuttlePriority);
  const auto rp = mean(D::Return, M::PedestrianPriority);
  if (!os || !op || !rs || !rp) {
    o.require(false, "missing cell");
    return;
  }
  o.detail << "mean s: outbound " << f2(*os) << "/" << f2(*op) << ", return " << f2(*rs) << "/" << f2(*rp)
           << " (prioritized/non-prioritized), " << r.excluded << " excluded";
  o.require(*rs > *os && *rp > *op, "return not slower than outbound");
  o.require(*os < *op && *rs < *rp, "prioritized not faster");
  const bool same = analysis::to_json(r) == analysis::to_json(again);
  o.detail << ", rerun " << (same ? "identical" : "differs") << "; " << f2(elapsed) << " s";
  o.require(same, "not deterministic");
  o.require(elapsed < kTravelBudget, "runtime");
}

void non_compliance(Outcome& o) {
  const auto cfg = sim::load_scenario(scenario_path("non-compliance.yaml"));
  sim::Simulation s(cfg);
  const auto r = analysis::non_compliance(s.run());
  const double n = static_cast<double>(r.crossings);
  const double sigma = n > 0 ? std::sqrt(kIncidentRate * (1 - kIncidentRate) / n) : 1.0;
  o.detail << r.incidents.size() << " incidents over " << r.crossings << " crossings, rate " << csv::fixed(r.rate, 3)
           << " (3 sigma " << csv::fixed(kIncidentSigmas * sigma, 3) << ")";
  o.require(r.crossings >= kMinCrossings, "fewer than 200 crossings");
  o.require(std::abs(r.rate - kIncidentRate) <= kIncidentSigmas * sigma, "rate outside 30 % +- 3 sigma");

  {
    const auto sc = sim::load_scenario(scenario_path("scripted-blockage.yaml"));
    sim::Simulation blocked(sc);
    const auto b = analysis::non_compliance(blocked.run());
    o.detail << "; scripted: " << b.incidents.size() << " incident(s), delay " << csv::fixed(b.max_delay, 1) << " s";
    o.require(b.incidents.size() == 1, "scripted blockage must give one incident");
    o.require(b.max_delay > kScriptedDelay, "scripted delay not above 40 s");
  }

  std::size_t compliant_incidents = 0;
  std::size_t compliant_crossings = 0;
  std::size_t compliant_trips = 0;
  for (std::uint64_t seed : {21, 22, 23}) {
    auto c = cfg;
    c.seed = seed;
    c.trips.resize(20);
    for (auto& p : c.pedestrians.processes) p.compliance = 1.0;
    c.pedestrians.processes.push_back({sim::SpawnKind::Crosswalk, 0.1, 1.0, 0});
    sim::Simulation cs(c);
    const auto cr = analysis::non_compliance(cs.run());
    compliant_incidents += cr.incidents.size();
    compliant_crossings += cr.crossings;
    compliant_trips += c.trips.size();
  }
  o.detail << "; compliant-only: " << compliant_incidents << " incidents over " << compliant_crossings << " crossings";
  o.require(compliant_incidents == 0, "incidents with compliant pedestrians");
  o.require(compliant_crossings == compliant_trips, "a compliant-only trip never crossed the zone");
}

void intersection_safety(Outcome& o) {
  std::size_t runs = 0;
  std::size_t ticks = 0;
  std::size_t green_in_zone = 0;
  std::size_t green_to_red = 0;
  std::size_t countdown_rises = 0;
  std::size_t red_phases = 0;
  for (int seed = 1; seed <= kSafetySeeds; ++seed) {
    for (auto mode : {crossing::Mode::ShuttlePriority, crossing::Mode::PedestrianPriority}) {
      auto cfg = sim::load_scenario(scenario_path("default.yaml"));
      cfg.seed = static_cast<std::uint64_t>(seed);
      cfg.initial_mode = mode;
      cfg.trips.assign(4, {});
      for (std::size_t i = 0; i < cfg.trips.size(); ++i) {
        cfg.trips[i] = {i % 2 ? shuttle::Direction::Return : shuttle::Direction::Outbound, mode};
      }
      cfg.pedestrians.processes = {{sim::SpawnKind::Crosswalk, 0.15, 0.8, 0},
                                   {sim::SpawnKind::OnRed, 0.0, 0.5, 0},
                                   {sim::SpawnKind::BusStop, 0.02, 1.0, 0},
                                   {sim::SpawnKind::BusStop, 0.02, 1.0, 1}};
      sim::Simulation s(cfg);
      const auto& log = s.run();
      ++runs;
      ticks += log.trace.size();
      for (const auto& t : log.trace) {
        if (t.phase == crossing::Phase::PedGreen && t.shuttle_in_zone) ++green_in_zone;
      }
      for (std::size_t i = 1; i < log.phase_log.size(); ++i) {
        if (log.phase_log[i - 1].phase == crossing::Phase::PedGreen && log.phase_log[i].phase == crossing::Phase::PedRed) {
          ++green_to_red;
        }
        if (log.phase_log[i].phase == crossing::Phase::PedRed) ++red_phases;
      }
      std::optional<codec::MovementState> last;
      for (const auto& sp : log.spatem) {
        std::optional<codec::MovementState> cur;
        for (const auto& m : sp.movements) {
          if (m.signal_group_id == crossing::kCrosswalkSignalGroup) cur = m;
        }
        if (cur && last && cur->event_state == last->event_state && cur->time_to_change != codec::kTimeToChangeUnknown &&
            last->time_to_change != codec::kTimeToChangeUnknown && cur->time_to_change > last->time_to_change) {
          ++countdown_rises;
        }
        last = cur;
      }
    }
  }
  o.detail << runs << " runs (" << kSafetySeeds << " seeds x 2 modes), " << ticks << " ticks, " << red_phases
           << " red phases; green with shuttle in zone " << green_in_zone << ", green->red " << green_to_red
           << ", countdown increases " << countdown_rises;
  o.require(green_in_zone == 0, "green while the shuttle is inside");
  o.require(green_to_red == 0, "direct green to red");
  o.require(countdown_rises == 0, "countdown increased within a phase");
  o.require(red_phases > 0, "no red phases exercised");
}

// Perception.

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t i) { return parent[i] == i ? i : parent[i] = find(parent[i]); }
  void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

using Partition = std::set<std::set<std::size_t>>;

Partition oracle_partition(const std::vector<perception::ScanPoint>& pts, double eps, std::size_t min_pts) {
  UnionFind uf(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      if (std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y) <= eps) uf.unite(i, j);
    }
  }
  std::map<std::size_t, std::set<std::size_t>> groups;
  for (std::size_t i = 0; i < pts.size(); ++i) groups[uf.find(i)].insert(i);
  Partition out;
  for (auto& [root, g] : groups) {
    if (g.size() >= min_pts) out.insert(g);
  }
  return out;
}

Partition as_partition(const std::vector<perception::Cluster>& clusters, const std::vector<perception::ScanPoint>& pts) {
  std::map<std::tuple<double, double, double>, std::size_t> index;
  for (std::size_t i = 0; i < pts.size(); ++i) index[{pts[i].x, pts[i].y, pts[i].z}] = i;
  Partition out;
  for (const auto& c : clusters) {
    std::set<std::size_t> g;
    for (const auto& p : c.points) g.insert(index.at({p.x, p.y, p.z}));
    out.insert(g);
  }
  return out;
}

std::vector<perception::ScanPoint> room() {
  const std::vector<double> heights{0.5, 1.5, 2.5};
  auto w = perception::wall_points({-5, 8}, {5, 8}, 0.1, heights);
  auto side = perception::wall_points({-5, -8}, {-5, 8}, 0.1, heights);
  w.insert(w.end(), side.begin(), side.end());
  return w;
}

struct Walker {
  int first = 0;
  int last = 0;  // inclusive scan indices
  geom::Vec2 start;
  geom::Vec2 velocity;
  geom::Vec2 at(int k) const { return start + velocity * (0.1 * (k - first)); }
};

constexpr int kSceneScans = 80;
constexpr int kCoastScans = 6;  // a lost track coasts this long before it is deleted

// Walkers at least 1 m apart wherever a live or coasting track could confuse them.
bool separable(const std::vector<Walker>& ws) {
  auto extended = [](const Walker& w, int k) { return k >= w.first && k <= w.last + kCoastScans; };
  for (std::size_t i = 0; i < ws.size(); ++i) {
    for (std::size_t j = 0; j < ws.size(); ++j) {
      if (i == j) continue;
      for (int k = 0; k < kSceneScans; ++k) {
        if (!extended(ws[i], k) || k < ws[j].first || k > ws[j].last) continue;
        if (geom::distance(ws[i].at(k), ws[j].at(k)) < kSeparation + 0.2) return false;
        if (k > ws[i].last && geom::distance(ws[i].at(ws[i].last), ws[j].at(k)) < kSeparation + 0.2) return false;
      }
    }
  }
  return true;
}

std::vector<Walker> make_scene(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  auto inside = [](geom::Vec2 p) { return p.x > -4.0 && p.x < 4.5 && p.y > -7.0 && p.y < 7.0; };
  while (true) {
    std::vector<Walker> ws;
    const int n = 1 + static_cast<int>(rng() % 4);
    for (int i = 0; i < n; ++i) {
      Walker w;
      w.first = static_cast<int>(rng() % 40);
      w.last = std::min(kSceneScans - 1, w.first + kMinPresence - 1 + static_cast<int>(rng() % 40));
      w.start = {-3.8 + 8 * u(rng), -6.8 + 13.6 * u(rng)};
      const double a = 2 * M_PI * u(rng);
      const double v = 0.3 + 1.1 * u(rng);
      w.velocity = {v * std::cos(a), v * std::sin(a)};
      if (inside(w.start) && inside(w.at(w.last))) ws.push_back(w);
    }
    if (!ws.empty() && separable(ws)) return ws;
  }
}

perception::Scan scan_of(std::vector<perception::ScanPoint> pts, int k) {
  perception::Scan s;
  s.sensor_id = 300;
  s.sim_time = from_millis(100 * static_cast<std::int64_t>(k));
  s.points = std::move(pts);
  return s;
}

void perception_oracle(Outcome& o) {
  const geom::Vec2 sensor{50.0, -3.5};
  std::vector<perception::Scan> learning;
  for (int k = 0; k < 60; ++k) learning.push_back(scan_of(room(), k));

  std::mt19937_64 rng(77);
  std::size_t walkers = 0;
  std::size_t recalled = 0;
  std::size_t id_switches = 0;
  std::size_t leaks = 0;
  std::size_t tracks_seen = 0;
  for (int scene = 0; scene < kPerceptionScenes; ++scene) {
    const auto ws = make_scene(rng);
    perception::BusStopPipeline pipe({}, sensor);
    pipe.learn(learning);
    std::vector<std::set<std::uint16_t>> ids(ws.size());
    std::map<std::uint16_t, std::set<std::size_t>> owners;
    std::set<std::uint16_t> confirmed;
    for (int k = 0; k < kSceneScans; ++k) {
      auto pts = room();
      for (const auto& w : ws) {
        if (k < w.first || k > w.last) continue;
        const auto p = perception::pedestrian_points(w.at(k), 0.25, 1.7, 4, 6, 0.37 * k);
        pts.insert(pts.end(), p.begin(), p.end());
      }
      perception::clip_to_sensor(pts);
      for (const auto& t : pipe.process(scan_of(std::move(pts), 100 + k))) {
        if (t.status != perception::TrackStatus::Confirmed) continue;
        confirmed.insert(t.track_id);
        if (t.misses > 0) continue;
        for (std::size_t i = 0; i < ws.size(); ++i) {
          if (k < ws[i].first || k > ws[i].last) continue;
          if (geom::distance(t.position - sensor, ws[i].at(k)) <= kMatchRadius) {
            ids[i].insert(t.track_id);
            owners[t.track_id].insert(i);
          }
        }
      }
    }
    walkers += ws.size();
    for (const auto& s : ids) {
      if (!s.empty()) ++recalled;
      if (s.size() > 1) id_switches += s.size() - 1;
    }
    for (const auto& [id, who] : owners) {
      if (who.size() > 1) id_switches += who.size() - 1;
    }
    for (auto id : confirmed) {
      if (!owners.contains(id)) ++leaks;
    }
    tracks_seen += confirmed.size();
  }

  // Static scenes must produce no tracks at all.
  {
    perception::BusStopPipeline pipe({}, sensor);
    pipe.learn(learning);
    for (int k = 0; k < 200; ++k) leaks += pipe.process(scan_of(room(), 100 + k)).size();
  }

  std::size_t partition_mismatches = 0;
  std::uniform_real_distribution<double> u(0, 1);
  for (int scene = 0; scene < kPerceptionScenes; ++scene) {
    const std::size_t n = 50 + rng() % 450;
    const double extent = 4 + 12 * u(rng);
    std::vector<perception::ScanPoint> pts(n);
    for (auto& p : pts) p = {extent * u(rng), extent * u(rng), 2 * u(rng)};
    if (as_partition(perception::cluster(pts), pts) != oracle_partition(pts, 0.4, 5)) ++partition_mismatches;
  }

  const double recall = walkers ? static_cast<double>(recalled) / static_cast<double>(walkers) : 0.0;
  o.detail << kPerceptionScenes << " scenes, " << walkers << " pedestrians, recall " << csv::fixed(recall, 3) << ", "
           << id_switches << " id switches, " << leaks << " background tracks (" << tracks_seen
           << " confirmed); clustering differs from union-find in " << partition_mismatches << " of "
           << kPerceptionScenes << " scenes";
  o.require(recall == 1.0, "recall below 1");
  o.require(id_switches == 0, "id switches");
  o.require(leaks == 0, "background leaks");
  o.require(partition_mismatches == 0, "clustering mismatch");
}

void dataset_conformance(Outcome& o) {
  auto cfg = sim::load_scenario(scenario_path("default.yaml"));
  cfg.trips.resize(4);
  TempDir a("ds_a");
  TempDir b("ds_b");
  {
    sim::Simulation s(cfg, a.path);
    s.run();
  }
  const auto root = a.path / "dataset";
  const auto rep = data::validate_layout(root);
  o.detail << rep.trips << " generated trips, layout " << (rep.ok() ? "ok" : "invalid");
  for (const auto& p : rep.problems) o.detail << " {" << p << "}";
  o.require(rep.ok(), "layout");
  o.require(rep.trips == cfg.trips.size(), "trip count");

  std::size_t files = 0;
  std::size_t differing = 0;
  for (const auto& ref : data::list_trips(root)) {
    const auto trip = data::read_trip(ref.dir);
    data::write_trip(b.path, trip);
    for (const auto& s : data::trip_schemas()) {
      ++files;
      if (slurp(ref.dir / s.path) != slurp(b.path / trip.relative_dir() / s.path)) ++differing;
    }
  }
  o.detail << "; rewrite: " << differing << " of " << files << " files differ";
  o.require(files > 0 && differing == 0, "rewrite not byte-identical");

  std::vector<std::pair<SimTime, codec::CamPayload>> stream;
  SimTime t = 0;
  auto push = [&](std::uint16_t mission, std::uint16_t progress) {
    codec::CamPayload c;
    c.mission_id = mission;
    c.mission_progress = progress;
    stream.push_back({t, c});
    t += from_millis(100);
  };
  for (std::uint16_t m : {11, 12, 13}) {
    for (int i = 0; i < 50; ++i) push(0, 0);
    for (int i = 0; i <= 200; ++i) push(m, static_cast<std::uint16_t>(5 * i));
    for (int i = 0; i < 20; ++i) push(m, 1000);
  }
  for (int i = 0; i < 50; ++i) push(0, 0);
  const auto w = data::segment_trips(stream);
  o.detail << "; segmentation of 3 missions gives " << w.size() << " trips";
  o.require(w.size() == 3, "segmentation");
}

struct Criterion {
  const char* name;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{{"codec-roundtrip", codec_roundtrip},   {"loss-fidelity", loss_fidelity},
                                   {"red-time-fraction", red_fraction},     {"travel-time-structure", travel_structure},
                                   {"non-compliance", non_compliance},      {"intersection-safety", intersection_safety},
                                   {"perception-oracle", perception_oracle}, {"dataset-conformance", dataset_conformance}};
  std::set<std::string> only(argv + 1, argv + argc);
  bool all_pass = true;
  for (const auto& c : all) {
    if (!only.empty() && !only.contains(c.name)) continue;
    Outcome o;
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    all_pass = all_pass && o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail.str() << std::endl;
  }
  return all_pass ? 0 : 1;
}
