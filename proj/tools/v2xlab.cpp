#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "v2xlab/analysis.hpp"
#include "v2xlab/datastore.hpp"
#include "v2xlab/simcore.hpp"
#include "v2xlab/telemetry.hpp"

namespace fs = std::filesystem;
using namespace v2xlab;

namespace {

telemetry::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

fs::path dataset_root(const fs::path& dir) {
  if (fs::is_directory(dir / "dataset")) return dir / "dataset";
  return dir;
}

struct Output {
  bool json = false;
  bool csv = false;
};

std::optional<data::AliasTable> load_aliases(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return data::AliasTable::load(path);
}

sim::RunLog load_run_log(const fs::path& dir, const std::string& scenario, const data::AliasTable* aliases) {
  if (fs::is_regular_file(dir)) return sim::read_world_trace(dir);
  if (fs::exists(dir / "world_trace.csv")) return sim::read_world_trace(dir / "world_trace.csv");
  sim::ScenarioConfig cfg;
  std::optional<geom::Polygon> zone;
  if (!scenario.empty()) {
    cfg = sim::load_scenario(scenario);
    zone = cfg.map.conflict_zone;
  }
  return analysis::run_log_from_dataset(dataset_root(dir), geo::GeoAnchor{cfg.anchor_lat, cfg.anchor_lon}, zone,
                                        aliases);
}

void print_stats(const std::string& label, const analysis::Stats& s) {
  std::cout << label << ": n=" << s.n << " mean=" << csv::fixed(s.mean, 2) << " median=" << csv::fixed(s.median, 2)
            << " std=" << csv::fixed(s.std, 2) << " q1=" << csv::fixed(s.q1, 2) << " q3=" << csv::fixed(s.q3, 2)
            << " min=" << csv::fixed(s.min, 2) << " max=" << csv::fixed(s.max, 2) << " outliers=" << s.outliers.size()
            << (s.single_sample ? " (single sample)" : "") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"V2X public-transport simulation lab"};
  app.require_subcommand(1);

  // sim
  auto* sim_cmd = app.add_subcommand("sim", "Run scenarios")->require_subcommand(1);
  auto* sim_run = sim_cmd->add_subcommand("run", "Run a scenario to completion");
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trips;
  std::string out_dir;
  sim_run->add_option("--scenario", scenario, "Scenario YAML")->required()->check(CLI::ExistingFile);
  sim_run->add_option("--seed", seed, "Override the scenario seed");
  sim_run->add_option("--trips", trips, "Override the trip count");
  sim_run->add_option("--out", out_dir, "Write dataset/ and world_trace.csv here");

  // dataset
  auto* ds_cmd = app.add_subcommand("dataset", "Inspect recorded datasets")->require_subcommand(1);
  std::string ds_dir;
  std::string aliases_path;
  auto* ds_validate = ds_cmd->add_subcommand("validate", "Check layout and schemas");
  ds_validate->add_option("dir", ds_dir, "Dataset root or run directory")->required()->check(CLI::ExistingDirectory);
  auto* ds_info = ds_cmd->add_subcommand("info", "Summarize recordings");
  ds_info->add_option("dir", ds_dir, "Dataset root or run directory")->required()->check(CLI::ExistingDirectory);

  // analyze
  auto* an_cmd = app.add_subcommand("analyze", "Evaluate recordings")->require_subcommand(1);
  std::string an_dir;
  Output fmt;
  double cell = 5.0;
  std::size_t min_cell = 50;
  auto add_common = [&](CLI::App* c, bool aliases) {
    c->add_option("dir", an_dir, "Dataset root, run directory or world trace")->required()->check(CLI::ExistingPath);
    auto* j = c->add_flag("--json", fmt.json, "JSON output");
    c->add_flag("--csv", fmt.csv, "CSV output")->excludes(j);
    c->add_option("--scenario", scenario, "Scenario YAML for zones and geo anchor")->check(CLI::ExistingFile);
    if (aliases) c->add_option("--aliases", aliases_path, "Column alias table (YAML)")->check(CLI::ExistingFile);
  };
  auto* an_loss = an_cmd->add_subcommand("loss", "Package loss with spatial heatmap");
  add_common(an_loss, true);
  an_loss->add_option("--cell", cell, "Heatmap cell size in metres")->check(CLI::PositiveNumber);
  an_loss->add_option("--min-cell-samples", min_cell, "Messages a cell needs to count as worst cell");
  auto* an_travel = an_cmd->add_subcommand("travel", "Travel times per direction and mode");
  add_common(an_travel, true);
  auto* an_comp = an_cmd->add_subcommand("compliance", "Red-crossing incidents and stop delays");
  add_common(an_comp, true);
  auto* an_red = an_cmd->add_subcommand("red-fraction", "Share of time the crosswalk is not green");
  add_common(an_red, true);

  // telemetry
  auto* tel_cmd = app.add_subcommand("telemetry", "Control-center backend")->require_subcommand(1);
  auto* tel_serve = tel_cmd->add_subcommand("serve", "Run a scenario live and serve NDJSON over TCP");
  telemetry::ServerOptions server_opts;
  std::optional<std::uint64_t> max_ticks;
  tel_serve->add_option("--scenario", scenario, "Scenario YAML")->required()->check(CLI::ExistingFile);
  tel_serve->add_option("--host", server_opts.host, "Listen address");
  tel_serve->add_option("--port", server_opts.port, "Listen port (0 picks one)");
  tel_serve->add_option("--speed", server_opts.speed, "Simulated seconds per wall second (0 = unthrottled)");
  tel_serve->add_option("--rate", server_opts.snapshot_hz, "Snapshot rate in Hz")->check(CLI::PositiveNumber);
  tel_serve->add_option("--ticks", max_ticks, "Stop after this many ticks");
  bool manual = false;
  tel_serve->add_flag("--manual", manual, "Ignore the scenario's trip schedule; missions come from operators");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim_run->parsed()) {
      auto cfg = sim::load_scenario(scenario);
      if (seed) cfg.seed = *seed;
      if (trips) {
        std::vector<sim::TripSpec> t;
        for (std::size_t i = 0; i < *trips; ++i) t.push_back(cfg.trips.at(i % cfg.trips.size()));
        cfg.trips = std::move(t);
      }
      std::optional<fs::path> out;
      if (!out_dir.empty()) out = out_dir;
      sim::Simulation s(cfg, out);
      const auto& log = s.run();
      for (const auto& t : log.trips) {
        std::cout << "trip " << t.index << " mission " << t.mission_id << " " << shuttle::to_string(t.direction) << " "
                  << crossing::to_string(t.mode) << " "
                  << (t.completed_at ? csv::fixed(t.travel_time(), 1) + " s" : std::string("incomplete")) << "\n";
      }
      std::cout << "pedestrians " << log.pedestrians_spawned << ", net digest " << std::hex << log.net_digest << std::dec
                << "\n";
      if (out) std::cout << "written to " << out->string() << "\n";
      return 0;
    }

    if (ds_validate->parsed()) {
      const auto rep = data::validate_layout(dataset_root(ds_dir));
      for (const auto& p : rep.problems) std::cout << p << "\n";
      std::cout << rep.trips << " trips, " << (rep.ok() ? "layout ok" : "layout invalid") << "\n";
      return rep.ok() ? 0 : 1;
    }
    if (ds_info->parsed()) {
      std::cout << data::dataset_info(dataset_root(ds_dir)).summary() << "\n";
      return 0;
    }

    const auto aliases = load_aliases(aliases_path);
    const data::AliasTable* al = aliases ? &*aliases : nullptr;

    if (an_loss->parsed()) {
      analysis::LossOptions o;
      o.cell_size = cell;
      o.min_cell_samples = min_cell;
      o.aliases = al;
      if (!scenario.empty()) {
        for (const auto& ob : sim::load_scenario(scenario).map.obstructions) o.zones.push_back({ob.name, ob.polygon});
      }
      const auto r = analysis::package_loss(dataset_root(an_dir), o);
      if (fmt.json) {
        std::cout << analysis::to_json(r) << "\n";
      } else if (fmt.csv) {
        std::cout << csv::serialize(analysis::to_csv(r));
      } else {
        std::cout << "messages " << r.sent << ", lost " << r.lost << " (" << csv::fixed(r.loss_percent, 2) << " %)\n";
        for (const auto& z : r.zones) {
          std::cout << "zone " << z.name << ": " << z.sent << " messages, " << csv::fixed(z.loss_percent, 2) << " % lost\n";
        }
        if (r.max_cell) {
          const auto c = r.cell_center(*r.max_cell);
          std::cout << "worst cell at (" << csv::fixed(c.x, 1) << ", " << csv::fixed(c.y, 1) << "): "
                    << csv::fixed(100.0 * r.heatmap.at(*r.max_cell).rate(), 2) << " %\n";
        }
        std::size_t fallback = 0;
        for (const auto& t : r.trips) fallback += t.lower_confidence ? 1 : 0;
        if (fallback) std::cout << fallback << " trip(s) estimated from expected counts\n";
      }
      return 0;
    }
    if (an_travel->parsed()) {
      const auto r = analysis::travel_times(dataset_root(an_dir), al);
      if (fmt.json) {
        std::cout << analysis::to_json(r) << "\n";
      } else if (fmt.csv) {
        std::cout << csv::serialize(analysis::to_csv(r));
      } else {
        for (const auto& [k, s] : r.groups) {
          print_stats(std::string(shuttle::to_string(k.first)) + " " + crossing::to_string(k.second), s);
        }
        if (r.overall) print_stats("all", *r.overall);
        if (r.excluded) std::cout << r.excluded << " incomplete trip(s) excluded\n";
      }
      return 0;
    }
    if (an_comp->parsed()) {
      const auto r = analysis::non_compliance(load_run_log(an_dir, scenario, al));
      if (fmt.json) {
        std::cout << analysis::to_json(r) << "\n";
      } else if (fmt.csv) {
        std::cout << csv::serialize(analysis::to_csv(r));
      } else {
        std::cout << r.incidents.size() << " incidents over " << r.crossings << " zone passages, rate "
                  << csv::fixed(100.0 * r.rate, 2) << " %\n";
        std::cout << "max stop delay " << csv::fixed(r.max_delay, 1) << " s over " << r.trip_delays.size()
                  << " trip(s)\n";
      }
      return 0;
    }
    if (an_red->parsed()) {
      const auto r = analysis::red_fraction(load_run_log(an_dir, scenario, al));
      if (fmt.json) {
        std::cout << analysis::to_json(r) << "\n";
      } else if (fmt.csv) {
        std::cout << csv::serialize(analysis::to_csv(r));
      } else {
        const double f = r.horizon_seconds > 0 ? r.red_seconds / r.horizon_seconds : 0.0;
        std::cout << "red " << csv::fixed(r.red_seconds, 1) << " s of " << csv::fixed(r.horizon_seconds, 1) << " s ("
                  << csv::fixed(100.0 * f, 2) << " %), immediate crossing " << csv::fixed(100.0 * r.fraction_immediate_cross, 2)
                  << " %\n";
      }
      return 0;
    }

    if (tel_serve->parsed()) {
      auto cfg = sim::load_scenario(scenario);
      if (manual) cfg.auto_dispatch = false;
      sim::Simulation s(cfg);
      server_opts.max_ticks = max_ticks;
      telemetry::Server server(s, server_opts);
      const auto port = server.start();
      std::cout << "listening on " << server_opts.host << ":" << port << std::endl;
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.run();
      g_server = nullptr;
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
