#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "v2xlab/datastore.hpp"

using namespace v2xlab;
using namespace v2xlab::data;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("v2xlab_" + name)) {
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

codec::CamPayload cam(std::uint16_t mission, std::uint16_t progress) {
  codec::CamPayload c;
  c.mission_id = mission;
  c.mission_progress = progress;
  return c;
}

using Stream = std::vector<std::pair<SimTime, codec::CamPayload>>;

TripRecord random_trip(std::uint64_t seed, std::size_t rows) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-100, 100);
  auto trip = empty_trip("2024-06-03", 0);
  for (auto& [path, table] : trip.files) {
    SimTime t = 1'717'400'000'000'000'000;
    for (std::size_t r = 0; r < rows; ++r) {
      t += static_cast<SimTime>(rng() % 100'000'000);
      std::vector<std::string> row;
      for (const auto& col : table.header) {
        if (col.ends_with("_ns")) row.push_back(fmt_ns(t));
        else if (col.ends_with("_m")) row.push_back(fmt_m(u(rng)));
        else if (col.ends_with("_rad")) row.push_back(fmt_rad(u(rng) / 30));
        else row.push_back(std::to_string(rng() % 1000));
      }
      table.rows.push_back(std::move(row));
    }
  }
  return trip;
}

}  // namespace

TEST_SUITE("datastore") {
  TEST_CASE("one mission makes one trip") {
    const Stream s{{0, cam(0, 0)}, {1, cam(7, 0)}, {2, cam(7, 500)}, {3, cam(7, 900)}, {4, cam(0, 0)}, {5, cam(0, 0)}};
    const auto w = segment_trips(s);
    REQUIRE(w.size() == 1);
    CHECK(w[0].mission_id == 7);
    CHECK(w[0].start == 1);
    CHECK(w[0].end == 3);  // last CAM carrying the mission
    CHECK(w[0].closed_by == CloseReason::MissionCleared);
  }

  TEST_CASE("idle stream makes no trips") {
    Stream s;
    for (int i = 0; i < 100; ++i) s.push_back({i, cam(0, 0)});
    CHECK(segment_trips(s).empty());
  }

  TEST_CASE("back-to-back missions") {
    const Stream s{{0, cam(7, 0)}, {1, cam(7, 1000)}, {2, cam(7, 1000)}, {3, cam(8, 0)}, {4, cam(8, 1000)}, {5, cam(0, 0)}};
    const auto w = segment_trips(s);
    REQUIRE(w.size() == 2);
    CHECK(w[0].mission_id == 7);
    CHECK(w[0].closed_by == CloseReason::Completed);
    CHECK(w[0].end == 1);
    CHECK(w[1].mission_id == 8);
    CHECK(w[1].start == 3);
    CHECK(w[1].closed_by == CloseReason::Completed);
  }

  TEST_CASE("overlapping mission closes the open trip") {
    MissionSegmenter seg;
    CHECK(seg.feed(0, cam(7, 0)).size() == 1);
    const auto ev = seg.feed(1, cam(8, 0));
    REQUIRE(ev.size() == 2);
    CHECK(ev[0].kind == SegmentEvent::Kind::Close);
    CHECK(ev[0].reason == CloseReason::Overlap);
    CHECK(ev[0].overlapping);
    CHECK(ev[1].kind == SegmentEvent::Kind::Open);
    CHECK(ev[1].mission_id == 8);
    const auto fin = seg.finish(2);
    REQUIRE(fin);
    CHECK(fin->reason == CloseReason::EndOfStream);
  }

  TEST_CASE("three missions over a long stream") {
    Stream s;
    SimTime t = 0;
    for (std::uint16_t m : {3, 4, 5}) {
      for (int i = 0; i < 20; ++i) s.push_back({t++, cam(0, 0)});
      for (int i = 0; i <= 100; ++i) s.push_back({t++, cam(m, static_cast<std::uint16_t>(10 * i))});
      for (int i = 0; i < 30; ++i) s.push_back({t++, cam(m, 1000)});
    }
    const auto w = segment_trips(s);
    REQUIRE(w.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(w[i].mission_id == 3 + i);
  }

  TEST_CASE("empty trip round trip and layout") {
    TempDir dir("ds_empty");
    const auto trip = empty_trip("2024-06-03", 0);
    write_trip(dir.path, trip);
    CHECK(read_trip(dir.path / trip.relative_dir()) == trip);
    CHECK(trip.relative_dir() == fs::path("2024-06-03") / "trip_0");
    const auto rep = validate_layout(dir.path);
    CHECK(rep.ok());
    CHECK(rep.trips == 1);
    CHECK(fs::is_regular_file(dir.path / "2024-06-03/trip_0/infrastructure/bus_stop_1/object_tracks.csv"));
    CHECK(fs::is_regular_file(dir.path / "2024-06-03/trip_0/pedestrian_crossing/spatem.csv"));
    CHECK(fs::is_regular_file(dir.path / "2024-06-03/trip_0/shuttle/pose.csv"));
  }

  TEST_CASE("randomized trip rewrites byte-identically") {
    TempDir a("ds_a");
    TempDir b("ds_b");
    const auto trip = random_trip(11, 1000);
    write_trip(a.path, trip);
    const auto back = read_trip(a.path / trip.relative_dir());
    CHECK(back == trip);
    write_trip(b.path, back);
    for (const auto& s : trip_schemas()) {
      CHECK(slurp(a.path / trip.relative_dir() / s.path) == slurp(b.path / trip.relative_dir() / s.path));
    }
    CHECK(validate_layout(a.path).ok());
  }

  TEST_CASE("shuffled columns are rejected") {
    TempDir dir("ds_shuffle");
    write_trip(dir.path, empty_trip("2024-06-03", 0));
    const auto pose = dir.path / "2024-06-03/trip_0/shuttle/pose.csv";
    { std::ofstream(pose) << "x_m,timestamp_ns,y_m,heading_rad\n1.0,5,2.0,0.1\n"; }
    CHECK_THROWS_AS(read_trip(dir.path / "2024-06-03/trip_0"), SchemaError);
    CHECK_FALSE(validate_layout(dir.path).ok());
  }

  TEST_CASE("row arity is checked") {
    CHECK_THROWS_AS(csv::parse("a,b\n1,2\n3\n"), csv::ParseError);
  }

  TEST_CASE("layout problems are reported") {
    TempDir dir("ds_layout");
    write_trip(dir.path, empty_trip("2024-06-03", 0));
    write_trip(dir.path, empty_trip("2024-06-03", 2));
    fs::create_directories(dir.path / "2024-06-03/trip_0/extra");
    fs::create_directories(dir.path / "not-a-date");
    const auto rep = validate_layout(dir.path);
    CHECK(rep.problems.size() >= 3);
    TempDir mono("ds_mono");
    auto trip = empty_trip("2024-06-03", 0);
    trip.table(file::kSteeringAngle).rows = {{"10", "0.000000"}, {"5", "0.000000"}};
    write_trip(mono.path, trip);
    const auto r2 = validate_layout(mono.path);
    REQUIRE(r2.problems.size() == 1);
    CHECK(r2.problems[0].find("timestamps decrease") != std::string::npos);
  }

  TEST_CASE("aliases map foreign column names") {
    const auto al = AliasTable::parse_yaml(R"(aliases:
  stamp: timestamp_ns
  "shuttle/pose.csv:yaw": heading_rad
  px: x_m
  py: y_m
)");
    csv::Table t;
    t.header = {"yaw", "py", "stamp", "px", "quality"};
    t.rows = {{"0.5", "2", "10", "1", "good"}};
    const auto c = conform(t, schema_for(file::kPose), &al);
    CHECK(c.header == std::vector<std::string>{"timestamp_ns", "x_m", "y_m", "heading_rad", "quality"});
    CHECK(c.rows[0] == std::vector<std::string>{"10", "1", "2", "0.5", "good"});
    CHECK_THROWS_AS(conform(t, schema_for(file::kPose)), SchemaError);
    CHECK(al.canonical(file::kVelocity, "yaw") == "yaw");

    csv::Table spat;
    spat.header = {"timestamp_ns", "sequence", "intersection_id", "revision", "signal_group", "event_state",
                   "time_to_change"};
    CHECK_NOTHROW(conform(spat, schema_for(file::kSpatem), &al));
    CHECK_THROWS_AS(conform(spat, schema_for(file::kSpatem)), SchemaError);
  }

  TEST_CASE("extra trailing columns survive") {
    csv::Table t;
    t.header = {"timestamp_ns", "soc_percent", "cell_temp"};
    t.rows = {{"1", "80.0", "21"}};
    CHECK(conform(t, schema_for(file::kStateOfCharge)) == t);
  }

  TEST_CASE("dates and number formats") {
    CHECK(date_of(0) == "1970-01-01");
    CHECK(date_of(1'717'372'800'000) == "2024-06-03");
    CHECK(fmt_m(1.23456) == "1.235");
    CHECK(fmt_rad(-0.5) == "-0.500000");
    CHECK(fmt_ns(-12) == "-12");
  }

  TEST_CASE("dataset info") {
    TempDir dir("ds_info");
    for (std::size_t k = 0; k < 2; ++k) {
      auto trip = empty_trip("2024-06-03", k);
      trip.table(file::kDrivingStatus).rows = {{"0", "autonomous"}, {"60000000000", "autonomous"}};
      write_trip(dir.path, trip);
    }
    const auto info = dataset_info(dir.path);
    CHECK(info.trips == 2);
    CHECK(info.trips_per_date.at("2024-06-03") == 2);
    CHECK(list_trips(dir.path).size() == 2);
    CHECK_FALSE(info.summary().empty());
  }
}
