#include "v2xlab/telemetry.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstring>

namespace v2xlab::telemetry {

using json = nlohmann::json;

namespace {

json opt(const std::optional<SimTime>& t) { return t ? json(*t) : json(nullptr); }

const char* indicator_name(codec::Indicator i) {
  switch (i) {
    case codec::Indicator::Left: return "left";
    case codec::Indicator::Right: return "right";
    case codec::Indicator::Hazard: return "hazard";
    default: return "off";
  }
}

bool is_stale(const std::optional<SimTime>& seen, SimTime now) { return !seen || now - *seen > kStaleAfter; }

}  // namespace

std::size_t SystemSnapshot::stale_count() const {
  std::size_t n = (shuttle_stale ? 1 : 0) + (crossing_stale ? 1 : 0);
  for (const auto& b : bus_stops) n += b.stale ? 1 : 0;
  return n;
}

json to_json(const SystemSnapshot& s) {
  json j;
  j["v"] = kSchemaVersion;
  j["type"] = "snapshot";
  j["tick"] = s.tick;
  j["sim_time_ns"] = s.sim_time;
  if (s.shuttle) {
    const auto& v = *s.shuttle;
    j["shuttle"] = {{"x_m", v.position.x},
                    {"y_m", v.position.y},
                    {"heading_rad", v.heading},
                    {"speed_mps", v.speed},
                    {"soc_percent", v.soc ? json(*v.soc) : json(nullptr)},
                    {"indicator", indicator_name(v.indicator)},
                    {"door_status", v.door},
                    {"mission_id", v.mission_id},
                    {"progress", v.progress},
                    {"driving_status", v.driving_status ? json(shuttle::to_string(*v.driving_status)) : json(nullptr)},
                    {"paused", v.paused},
                    {"stamp_ns", v.stamp},
                    {"stale", s.shuttle_stale}};
  } else {
    j["shuttle"] = nullptr;
  }
  if (s.crossing) {
    const auto& c = *s.crossing;
    j["crossing"] = {{"phase", crossing::to_string(c.phase)},
                     {"mode", c.mode ? json(crossing::to_string(*c.mode)) : json(nullptr)},
                     {"countdown_s", c.countdown ? json(*c.countdown) : json(nullptr)},
                     {"stamp_ns", c.stamp},
                     {"stale", s.crossing_stale}};
  } else {
    j["crossing"] = nullptr;
  }
  j["bus_stops"] = json::array();
  for (const auto& b : s.bus_stops) {
    json boxes = json::array();
    for (const auto& x : b.boxes) boxes.push_back({{"x_m", x.position.x}, {"y_m", x.position.y}, {"radius_m", x.radius}});
    j["bus_stops"].push_back({{"station_id", b.station_id},
                              {"pedestrian_count", b.pedestrian_count ? json(*b.pedestrian_count) : json(nullptr)},
                              {"boxes", boxes},
                              {"last_seen_ns", opt(b.last_seen)},
                              {"stale", b.stale}});
  }
  json health = json::object();
  for (const auto& [id, t] : s.last_seen) health[std::to_string(id)] = {{"last_seen_ns", t}, {"stale", s.sim_time - t > kStaleAfter}};
  j["health"] = health;
  return j;
}

Aggregator::Aggregator(geo::GeoAnchor anchor, std::size_t bus_stops) : anchor_(anchor) {
  for (std::size_t k = 0; k < bus_stops; ++k) {
    BusStopView b;
    b.station_id = sim::kBusStopStation0 + static_cast<std::uint32_t>(k);
    snap_.bus_stops.push_back(b);
  }
}

void Aggregator::ingest(const sim::TickOutput& out) {
  snap_.tick = out.tick;
  snap_.sim_time = out.t;
  for (const auto& b : out.broadcasts) {
    snap_.last_seen[b.sender] = out.t;
    const auto& p = b.message.payload;
    if (const auto* cam = std::get_if<codec::CamPayload>(&p)) {
      auto& v = snap_.shuttle ? *snap_.shuttle : snap_.shuttle.emplace();
      v.position = anchor_.to_enu_e7(cam->latitude, cam->longitude);
      v.heading = cam->heading <= 3599 ? geo::cam_heading_to_enu(cam->heading) : v.heading;
      v.speed = cam->speed != 16383 ? cam->speed / 100.0 : 0.0;
      v.indicator = cam->indicator_status;
      v.door = cam->door_status;
      v.mission_id = cam->mission_id;
      v.progress = cam->mission_progress;
      v.stamp = out.t;
    } else if (const auto* sp = std::get_if<codec::SpatemPayload>(&p)) {
      auto& c = snap_.crossing ? *snap_.crossing : snap_.crossing.emplace();
      for (const auto& m : sp->movements) {
        if (m.signal_group_id != crossing::kCrosswalkSignalGroup) continue;
        switch (m.event_state) {
          case codec::EventState::ProtectedMovementAllowed: c.phase = crossing::Phase::PedGreen; break;
          case codec::EventState::ProtectedClearance: c.phase = crossing::Phase::PedClearance; break;
          default: c.phase = crossing::Phase::PedRed; break;
        }
        c.countdown.reset();
        if (m.time_to_change != codec::kTimeToChangeUnknown) c.countdown = m.time_to_change / 10.0;
      }
      c.stamp = out.t;
    } else if (const auto* cpm = std::get_if<codec::CpmPayload>(&p)) {
      for (auto& bs : snap_.bus_stops) {
        if (bs.station_id != b.sender) continue;
        const auto ref = anchor_.to_enu_e7(cpm->latitude, cpm->longitude);
        bs.boxes.clear();
        for (const auto& o : cpm->objects) {
          if (o.classification != codec::ObjectClass::Pedestrian) continue;
          bs.boxes.push_back({ref + geom::Vec2{o.dx / 100.0, o.dy / 100.0}, o.footprint_radius / 100.0});
        }
        bs.pedestrian_count = bs.boxes.size();
        bs.last_seen = out.t;
      }
    }
  }
  for (std::size_t k = 0; k < out.stop_pedestrian_counts.size() && k < snap_.bus_stops.size(); ++k) {
    auto& bs = snap_.bus_stops[k];
    bs.pedestrian_count = out.stop_pedestrian_counts[k];
    bs.last_seen = out.t;
    snap_.last_seen[bs.station_id] = out.t;
  }
  if (out.vehicle && snap_.shuttle) {
    snap_.shuttle->soc = out.vehicle->soc;
    snap_.shuttle->driving_status = out.vehicle->driving_status;
    snap_.shuttle->paused = out.vehicle->paused;
  }
  if (out.crossing_mode && snap_.crossing) snap_.crossing->mode = *out.crossing_mode;
  refresh_staleness();
}

void Aggregator::refresh_staleness() {
  const auto now = snap_.sim_time;
  snap_.shuttle_stale = is_stale(snap_.shuttle ? std::optional<SimTime>(snap_.shuttle->stamp) : std::nullopt, now);
  snap_.crossing_stale = is_stale(snap_.crossing ? std::optional<SimTime>(snap_.crossing->stamp) : std::nullopt, now);
  for (auto& b : snap_.bus_stops) b.stale = is_stale(b.last_seen, now);
}

const char* to_string(CommandKind k) {
  switch (k) {
    case CommandKind::SetIntersectionMode: return "set_intersection_mode";
    case CommandKind::DispatchMission: return "dispatch_mission";
    case CommandKind::PauseShuttle: return "pause_shuttle";
    case CommandKind::ResumeShuttle: return "resume_shuttle";
    case CommandKind::SendExternalTrajectory: return "send_external_trajectory";
  }
  return "unknown";
}

Command parse_command(const json& j) {
  if (!j.is_object()) throw BadCommand("command must be a JSON object");
  if (j.contains("v") && j["v"] != kSchemaVersion) throw BadCommand("unsupported schema version");
  if (!j.contains("command") || !j["command"].is_string()) throw BadCommand("missing 'command'");
  Command c;
  if (j.contains("id")) c.id = j["id"];
  const auto name = j["command"].get<std::string>();
  const std::pair<const char*, CommandKind> kinds[] = {
      {"set_intersection_mode", CommandKind::SetIntersectionMode},
      {"dispatch_mission", CommandKind::DispatchMission},
      {"pause_shuttle", CommandKind::PauseShuttle},
      {"resume_shuttle", CommandKind::ResumeShuttle},
      {"send_external_trajectory", CommandKind::SendExternalTrajectory}};
  bool found = false;
  for (const auto& [n, k] : kinds) {
    if (name == n) {
      c.kind = k;
      found = true;
    }
  }
  if (!found) throw BadCommand("unknown command '" + name + "'");
  c.target = c.kind == CommandKind::SetIntersectionMode ? "crossing" : "shuttle";
  if (j.contains("target")) {
    const auto& t = j["target"];
    if (t.is_string()) c.target = t.get<std::string>();
    else if (t.is_number_integer()) c.target = std::to_string(t.get<std::int64_t>());
    else throw BadCommand("'target' must be a name or station id");
  }
  try {
    switch (c.kind) {
      case CommandKind::SetIntersectionMode:
        if (!j.contains("mode")) throw BadCommand("missing 'mode'");
        c.mode = crossing::parse_mode(j["mode"].get<std::string>());
        break;
      case CommandKind::DispatchMission:
        if (!j.contains("direction")) throw BadCommand("missing 'direction'");
        c.direction = shuttle::parse_direction(j["direction"].get<std::string>());
        break;
      case CommandKind::SendExternalTrajectory:
        if (!j.contains("samples") || !j["samples"].is_array()) throw BadCommand("missing 'samples'");
        for (const auto& s : j["samples"]) {
          c.samples.push_back({s.at("t").get<double>(), s.at("x").get<double>(), s.at("y").get<double>(),
                               s.at("heading").get<double>(), s.at("speed").get<double>()});
        }
        break;
      default: break;
    }
  } catch (const BadCommand&) {
    throw;
  } catch (const std::exception& e) {
    throw BadCommand(std::string("malformed ") + name + ": " + e.what());
  }
  return c;
}

json to_json(const Ack& a) {
  return {{"v", kSchemaVersion},
          {"type", "ack"},
          {"id", a.id},
          {"command", to_string(a.kind)},
          {"ok", a.ok},
          {"error", a.error},
          {"submitted_tick", a.submitted_tick},
          {"effective_tick", a.effective_tick}};
}

CommandHub::CommandHub(sim::Simulation& sim) : sim_(&sim) {
  sim.set_pre_tick_hook([this](sim::Simulation& s) { drain(s); });
}

void CommandHub::submit(Command command, Reply reply) {
  std::lock_guard lock(mu_);
  AuditEntry e;
  e.seq = audit_.size();
  e.command = std::move(command);
  e.submitted_tick = sim_->tick_index();
  audit_.push_back(std::move(e));
  queue_.emplace_back(audit_.back().seq, std::move(reply));
}

std::vector<AuditEntry> CommandHub::audit_log() const {
  std::lock_guard lock(mu_);
  return audit_;
}

std::size_t CommandHub::pending() const {
  std::lock_guard lock(mu_);
  return queue_.size();
}

void CommandHub::drain(sim::Simulation& sim) {
  std::deque<std::pair<std::uint64_t, Reply>> work;
  {
    std::lock_guard lock(mu_);
    work.swap(queue_);
  }
  for (auto& [seq, reply] : work) {
    Command cmd;
    {
      std::lock_guard lock(mu_);
      cmd = audit_[seq].command;
    }
    Ack ack = apply(sim, cmd);
    {
      std::lock_guard lock(mu_);
      ack.submitted_tick = audit_[seq].submitted_tick;
      audit_[seq].result = ack;
    }
    if (reply) reply(ack);
  }
}

Ack CommandHub::apply(sim::Simulation& sim, const Command& c) {
  Ack a;
  a.id = c.id;
  a.kind = c.kind;
  a.effective_tick = sim.tick_index();
  const bool to_crossing = c.target == "crossing" || c.target == std::to_string(sim::kCrossingStation);
  const bool to_shuttle = c.target == "shuttle" || c.target == std::to_string(sim::kShuttleStation);
  const bool wants_crossing = c.kind == CommandKind::SetIntersectionMode;
  if ((wants_crossing && !to_crossing) || (!wants_crossing && !to_shuttle)) {
    a.error = "UnknownTarget: no " + std::string(wants_crossing ? "intersection" : "vehicle") + " named '" + c.target + "'";
    return a;
  }
  switch (c.kind) {
    case CommandKind::SetIntersectionMode: sim.set_intersection_mode(*c.mode); break;
    case CommandKind::DispatchMission: a.error = sim.dispatch_mission(*c.direction); break;
    case CommandKind::PauseShuttle: sim.pause_shuttle(); break;
    case CommandKind::ResumeShuttle: sim.resume_shuttle(); break;
    case CommandKind::SendExternalTrajectory: {
      shuttle::Trajectory t;
      t.source = shuttle::TrajectorySource::External;
      t.samples = c.samples;
      t.computed_at = sim.now();
      const auto err = sim.send_external_trajectory(std::move(t));
      if (!err.empty()) a.error = "InvalidTrajectory: " + err;
      break;
    }
  }
  a.ok = a.error.empty();
  return a;
}

Server::Server(sim::Simulation& sim, ServerOptions options)
    : sim_(sim), options_(std::move(options)), agg_(sim.anchor()), hub_(sim) {}

Server::~Server() {
  stop_ = true;
  if (io_.joinable()) io_.join();
  std::lock_guard lock(clients_mu_);
  for (const auto& [fd, buf] : clients_) ::close(fd);
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

std::uint16_t Server::start() {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(options_.port);
  if (::inet_pton(AF_INET, options_.host.c_str(), &addr.sin_addr) != 1) {
    throw std::runtime_error("bad listen address '" + options_.host + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 8) < 0) {
    throw std::runtime_error(std::string("bind/listen: ") + std::strerror(errno));
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  io_ = std::thread([this] { io_loop(); });
  return port_;
}

std::size_t Server::clients() const {
  std::lock_guard lock(clients_mu_);
  return clients_.size();
}

void Server::send_line(int fd, const std::string& line) {
  std::lock_guard lock(write_mu_);
  {
    std::lock_guard cl(clients_mu_);
    if (!clients_.contains(fd)) return;
  }
  std::string data = line + "\n";
  std::size_t off = 0;
  while (off < data.size()) {
    const auto n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n <= 0) return;
    off += static_cast<std::size_t>(n);
  }
}

void Server::broadcast_line(const std::string& line) {
  std::vector<int> fds;
  {
    std::lock_guard lock(clients_mu_);
    for (const auto& [fd, buf] : clients_) fds.push_back(fd);
  }
  for (int fd : fds) send_line(fd, line);
}

void Server::handle_line(int fd, const std::string& line) {
  if (line.empty()) return;
  Command cmd;
  try {
    cmd = parse_command(json::parse(line));
  } catch (const std::exception& e) {
    send_line(fd, json{{"v", kSchemaVersion}, {"type", "error"}, {"error", e.what()}}.dump());
    return;
  }
  hub_.submit(std::move(cmd), [this, fd](const Ack& a) { send_line(fd, to_json(a).dump()); });
}

void Server::io_loop() {
  while (!stop_) {
    std::vector<pollfd> fds{{listen_fd_, POLLIN, 0}};
    {
      std::lock_guard lock(clients_mu_);
      for (const auto& [fd, buf] : clients_) fds.push_back({fd, POLLIN, 0});
    }
    if (::poll(fds.data(), fds.size(), 50) <= 0) continue;
    if (fds[0].revents & POLLIN) {
      const int c = ::accept(listen_fd_, nullptr, nullptr);
      if (c >= 0) {
        std::lock_guard lock(clients_mu_);
        clients_[c] = {};
      }
    }
    for (std::size_t i = 1; i < fds.size(); ++i) {
      if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      char buf[4096];
      const auto n = ::recv(fds[i].fd, buf, sizeof buf, 0);
      if (n <= 0) {
        std::lock_guard wl(write_mu_);
        std::lock_guard lock(clients_mu_);
        clients_.erase(fds[i].fd);
        ::close(fds[i].fd);
        continue;
      }
      std::vector<std::string> lines;
      {
        std::lock_guard lock(clients_mu_);
        auto& pending = clients_[fds[i].fd];
        pending.append(buf, static_cast<std::size_t>(n));
        for (auto pos = pending.find('\n'); pos != std::string::npos; pos = pending.find('\n')) {
          lines.push_back(pending.substr(0, pos));
          pending.erase(0, pos + 1);
        }
      }
      for (auto& l : lines) {
        if (!l.empty() && l.back() == '\r') l.pop_back();
        handle_line(fds[i].fd, l);
      }
    }
  }
}

void Server::run() {
  using clock = std::chrono::steady_clock;
  const double tick_s = to_seconds(sim_.config().tick());
  const auto every = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(1.0 / (options_.snapshot_hz * tick_s))));
  const auto t0 = clock::now();
  std::uint64_t done = 0;
  while (!stop_ && (!options_.max_ticks || done < *options_.max_ticks)) {
    sim_.step();
    agg_.ingest(sim_.last_output());
    ++done;
    if (sim_.last_output().tick % every == 0) broadcast_line(to_json(agg_.snapshot()).dump());
    if (options_.speed > 0) {
      const auto due = t0 + std::chrono::duration_cast<clock::duration>(
                                std::chrono::duration<double>(static_cast<double>(done) * tick_s / options_.speed));
      std::this_thread::sleep_until(due);
    }
  }
}

}  // namespace v2xlab::telemetry
