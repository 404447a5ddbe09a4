#include "v2xlab/shuttle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <unordered_map>

namespace v2xlab::shuttle {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDegToRad = kPi / 180.0;
constexpr double kStandstill = 0.05;

double mod2pi(double a) {
  a = std::fmod(a, 2.0 * kPi);
  return a < 0.0 ? a + 2.0 * kPi : a;
}

}  // namespace

const char* to_string(Direction d) { return d == Direction::Outbound ? "outbound" : "return"; }

Direction parse_direction(const std::string& s) {
  if (s == "outbound") return Direction::Outbound;
  if (s == "return") return Direction::Return;
  throw std::invalid_argument("unknown direction '" + s + "'");
}

const char* to_string(TrajectorySource s) {
  switch (s) {
    case TrajectorySource::Cruise: return "cruise";
    case TrajectorySource::Docking: return "docking";
    case TrajectorySource::External: return "external";
    case TrajectorySource::ControlledStop: return "controlled_stop";
  }
  return "unknown";
}

int priority(TrajectorySource s) {
  switch (s) {
    case TrajectorySource::External: return 3;
    case TrajectorySource::Docking: return 2;
    case TrajectorySource::Cruise: return 1;
    case TrajectorySource::ControlledStop: return 0;
  }
  return 0;
}

const char* to_string(YieldReason r) {
  switch (r) {
    case YieldReason::Green: return "green";
    case YieldReason::Red: return "red";
    case YieldReason::FailSafe: return "fail_safe";
    case YieldReason::Infeasible: return "infeasible";
    case YieldReason::NoMapMatch: return "no_map_match";
    case YieldReason::Passed: return "passed";
  }
  return "unknown";
}

const char* to_string(DrivingStatus s) { return s == DrivingStatus::Manual ? "manual" : "autonomous"; }

// ---------------------------------------------------------------------------
// Route

RoutePlan RoutePlan::make(std::uint16_t mission_id, Direction direction, geom::Polyline path,
                          std::optional<std::pair<double, double>> turning, const ShuttleConfig& config) {
  if (path.empty() || path.length() <= 0.0) throw std::invalid_argument("route path must have positive length");
  if (direction == Direction::Return && !turning) {
    throw std::invalid_argument("return routes must contain a turning segment");
  }
  RoutePlan r;
  r.mission_id = mission_id;
  r.direction = direction;
  r.path = std::move(path);
  r.turning_segment = turning;
  r.start = r.pose_at(0.0);
  r.goal = r.pose_at(r.path.length());

  const double len = r.path.length();
  const std::size_t n = static_cast<std::size_t>(std::floor(len / r.limit_step)) + 2;
  r.speed_limit.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = std::min(len, i * r.limit_step);
    const double k = std::abs(r.path.curvature_at(s));
    double v = config.v_max;
    if (k > 1e-6) v = std::min(v, std::sqrt(config.lateral_accel / k));
    r.speed_limit[i] = v;
  }
  for (std::size_t i = n - 1; i-- > 0;) {
    r.speed_limit[i] = std::min(r.speed_limit[i], std::sqrt(r.speed_limit[i + 1] * r.speed_limit[i + 1] +
                                                            2.0 * config.comfort_decel * r.limit_step));
  }
  return r;
}

double RoutePlan::speed_limit_at(double s) const {
  if (speed_limit.empty()) return 0.0;
  const double x = std::max(0.0, s) / limit_step;
  const std::size_t i = std::min(speed_limit.size() - 1, static_cast<std::size_t>(x));
  const std::size_t j = std::min(speed_limit.size() - 1, i + 1);
  return std::min(speed_limit[i], speed_limit[j]);
}

bool RoutePlan::in_turning_segment(double s) const {
  return turning_segment && s >= turning_segment->first && s <= turning_segment->second;
}

geom::Pose RoutePlan::pose_at(double s) const { return {path.point_at(s), path.heading_at(s)}; }

// ---------------------------------------------------------------------------
// Trajectory

SimTime Trajectory::end_time() const {
  return samples.empty() ? computed_at : computed_at + from_seconds(samples.back().t);
}

bool Trajectory::exhausted(SimTime now) const { return samples.empty() || now > end_time(); }

TrajectorySample Trajectory::sample_at(SimTime time) const {
  if (samples.empty()) return {};
  const double t = to_seconds(time - computed_at);
  if (t <= samples.front().t) return samples.front();
  if (t >= samples.back().t) return samples.back();
  auto it = std::upper_bound(samples.begin(), samples.end(), t,
                             [](double v, const TrajectorySample& s) { return v < s.t; });
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double u = (t - a.t) / (b.t - a.t);
  TrajectorySample r;
  r.t = t;
  r.x = a.x + (b.x - a.x) * u;
  r.y = a.y + (b.y - a.y) * u;
  r.heading = geom::wrap_angle(a.heading + geom::wrap_angle(b.heading - a.heading) * u);
  r.speed = a.speed + (b.speed - a.speed) * u;
  return r;
}

void Trajectory::validate() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!(samples[i].speed >= 0.0)) throw std::invalid_argument("trajectory speed must be non-negative");
    if (i > 0 && !(samples[i].t > samples[i - 1].t)) {
      throw std::invalid_argument("trajectory sample times must be strictly increasing");
    }
    if (!std::isfinite(samples[i].x) || !std::isfinite(samples[i].y) || !std::isfinite(samples[i].heading)) {
      throw std::invalid_argument("trajectory samples must be finite");
    }
  }
}

void ObstacleSet::purge(SimTime now) {
  std::erase_if(objects, [now](const Obstacle& o) { return o.stale_after < now; });
}

namespace {

struct Profile {
  std::vector<double> s;
  std::vector<double> v;
};

/// 1-D motion along a path of length `length` with a stop at `stop_s`.
template <class Limit>
Profile speed_profile(double s0, double v0, double stop_s, double duration, Limit&& limit,
                      const ShuttleConfig& c, bool until_stopped) {
  constexpr double h = 0.01;
  const int per_sample = static_cast<int>(std::lround(c.sample_dt / h));
  Profile p;
  double s = s0;
  double v = std::max(0.0, v0);
  p.s.push_back(s);
  p.v.push_back(v);
  const bool reachable = stop_s > s0;
  for (int k = 1;; ++k) {
    const double d = stop_s - s;
    double v_new;
    if (d <= 1e-6) {
      v_new = reachable ? 0.0 : std::max(0.0, v - c.emergency_decel * h);
    } else {
      const double v_lim = limit(s);
      const double v_brake = std::sqrt(2.0 * c.comfort_decel * d);
      const double cap = std::min(v_lim, v_brake);
      if (v <= cap) {
        v_new = std::min(v + c.accel * h, cap);
      } else if (v > v_brake) {
        const double need = v * v / (2.0 * d);
        v_new = std::max(0.0, v - std::clamp(need, c.comfort_decel, c.emergency_decel) * h);
      } else {
        v_new = std::max(v_lim, v - c.comfort_decel * h);
      }
    }
    double s_new = s + 0.5 * (v + v_new) * h;
    if (reachable && s_new >= stop_s) {
      s_new = stop_s;
      v_new = 0.0;
    }
    s = s_new;
    v = v_new;
    if (k % per_sample == 0) {
      p.s.push_back(s);
      p.v.push_back(v);
      const double t = (k / per_sample) * c.sample_dt;
      if (until_stopped) {
        if (v <= 0.0 && (!reachable || s >= stop_s) && t >= c.sample_dt) break;
        if (t > 600.0) break;
      } else if (t >= duration - 1e-9) {
        break;
      }
    }
  }
  return p;
}

std::optional<std::pair<std::size_t, std::size_t>> first_collision(const Trajectory& traj, const ObstacleSet& obs,
                                                                   const ShuttleConfig& c, double clearance,
                                                                   double max_t = std::numeric_limits<double>::infinity()) {
  for (std::size_t k = 0; k < traj.samples.size(); ++k) {
    const auto& smp = traj.samples[k];
    if (smp.t > max_t) break;
    const SimTime at = traj.computed_at + from_seconds(smp.t);
    for (std::size_t j = 0; j < obs.objects.size(); ++j) {
      const auto& o = obs.objects[j];
      if (geom::distance({smp.x, smp.y}, o.predicted(at)) < c.footprint_radius + o.radius + clearance) {
        return std::make_pair(k, j);
      }
    }
  }
  return std::nullopt;
}

}  // namespace

CruiseResult cruise_plan(const VehicleState& state, const RoutePlan& route, const ObstacleSet& obstacles,
                         std::optional<double> signal_stop_s, std::optional<ZoneInterval> zone,
                         SimTime now, const ShuttleConfig& config) {
  const auto proj = route.path.project_window(state.pose.position, state.route_s - 2.0, state.route_s + 5.0);
  if (proj.distance > config.max_lateral_error) {
    throw OffRoute("lateral error " + std::to_string(proj.distance) + " m exceeds limit");
  }
  const double s0 = proj.s;
  const double len = route.path.length();
  double stop = len;
  if (signal_stop_s && *signal_stop_s >= s0 - 1e-6) stop = std::min(stop, std::max(*signal_stop_s, s0));

  CruiseResult result;
  auto build = [&](double stop_s) {
    Trajectory t;
    t.source = TrajectorySource::Cruise;
    t.computed_at = now;
    t.compute_duration = config.cruise_compute_s;
    const auto prof = speed_profile(
        s0, state.speed, stop_s, config.horizon, [&](double s) { return route.speed_limit_at(s); }, config, false);
    for (std::size_t i = 0; i < prof.s.size(); ++i) {
      const auto pose = route.pose_at(prof.s[i]);
      t.samples.push_back({i * config.sample_dt, pose.position.x, pose.position.y, pose.heading, prof.v[i]});
    }
    return t;
  };

  Trajectory traj = build(stop);
  const double reach = config.horizon * config.v_max + 10.0;
  for (int iter = 0; iter < 12; ++iter) {
    const auto hit = first_collision(traj, obstacles, config, config.obstacle_clearance);
    if (!hit) break;
    const auto& smp = traj.samples[hit->first];
    const auto& o = obstacles.objects[hit->second];
    const geom::Vec2 p = o.predicted(now + from_seconds(smp.t));
    const double sp = route.path.project_window(p, s0 - 2.0, s0 + reach).s;
    double cand = sp - (config.footprint_radius + o.radius + config.stop_margin);
    if (zone) {
      const double band = config.footprint_radius + o.radius;
      const double zs = zone->first - config.zone_stop_offset;
      if (sp >= zone->first - band && sp <= zone->second + band && zs >= s0 - 1e-6) cand = std::min(cand, zs);
    }
    cand = std::max(cand, s0);
    if (cand >= stop - 1e-6) {
      if (stop <= s0 + 1e-9) break;
      cand = s0;
    }
    stop = cand;
    result.obstacle_stop = true;
    traj = build(stop);
  }
  result.trajectory = std::move(traj);
  result.stop_s = stop;
  return result;
}

// ---------------------------------------------------------------------------
// Dubins

namespace {

geom::Pose advance(const geom::Pose& p, double kappa, double len) {
  geom::Pose q = p;
  if (std::abs(kappa) < 1e-12) {
    q.position = p.position + geom::unit_from_heading(p.heading) * len;
  } else {
    const double h1 = p.heading + kappa * len;
    q.position.x += (std::sin(h1) - std::sin(p.heading)) / kappa;
    q.position.y += (std::cos(p.heading) - std::cos(h1)) / kappa;
    q.heading = h1;
  }
  q.heading = geom::wrap_angle(q.heading);
  return q;
}

double kappa_of(char c, double radius) {
  if (c == 'L') return 1.0 / radius;
  if (c == 'R') return -1.0 / radius;
  return 0.0;
}

}  // namespace

std::vector<DubinsPath> dubins_paths(const geom::Pose& start, const geom::Pose& goal, double radius) {
  const geom::Vec2 d = goal.position - start.position;
  const double D = geom::norm(d) / radius;
  const double th = mod2pi(std::atan2(d.y, d.x));
  const double a = mod2pi(start.heading - th);
  const double b = mod2pi(goal.heading - th);
  const double sa = std::sin(a), sb = std::sin(b), ca = std::cos(a), cb = std::cos(b);
  const double cab = std::cos(a - b);

  struct Cand {
    const char* word;
    double t, p, q;
    bool ok;
  };
  std::vector<Cand> cands;
  {
    const double p2 = 2 + D * D - 2 * cab + 2 * D * (sa - sb);
    if (p2 >= 0) {
      const double tmp = std::atan2(cb - ca, D + sa - sb);
      cands.push_back({"LSL", mod2pi(-a + tmp), std::sqrt(p2), mod2pi(b - tmp), true});
    }
  }
  {
    const double p2 = 2 + D * D - 2 * cab + 2 * D * (sb - sa);
    if (p2 >= 0) {
      const double tmp = std::atan2(ca - cb, D - sa + sb);
      cands.push_back({"RSR", mod2pi(a - tmp), std::sqrt(p2), mod2pi(-b + tmp), true});
    }
  }
  {
    const double p2 = -2 + D * D + 2 * cab + 2 * D * (sa + sb);
    if (p2 >= 0) {
      const double p = std::sqrt(p2);
      const double tmp = std::atan2(-ca - cb, D + sa + sb) - std::atan2(-2.0, p);
      cands.push_back({"LSR", mod2pi(-a + tmp), p, mod2pi(-b + tmp), true});
    }
  }
  {
    const double p2 = D * D - 2 + 2 * cab - 2 * D * (sa + sb);
    if (p2 >= 0) {
      const double p = std::sqrt(p2);
      const double tmp = std::atan2(ca + cb, D - sa - sb) - std::atan2(2.0, p);
      cands.push_back({"RSL", mod2pi(a - tmp), p, mod2pi(b - tmp), true});
    }
  }
  {
    const double tmp = (6.0 - D * D + 2 * cab + 2 * D * (sa - sb)) / 8.0;
    if (std::abs(tmp) <= 1.0) {
      const double p = mod2pi(2 * kPi - std::acos(tmp));
      const double t = mod2pi(a - std::atan2(ca - cb, D - sa + sb) + p / 2.0);
      cands.push_back({"RLR", t, p, mod2pi(a - b - t + p), true});
    }
  }
  {
    const double tmp = (6.0 - D * D + 2 * cab + 2 * D * (sb - sa)) / 8.0;
    if (std::abs(tmp) <= 1.0) {
      const double p = mod2pi(2 * kPi - std::acos(tmp));
      const double t = mod2pi(-a - std::atan2(ca - cb, D + sa - sb) + p / 2.0);
      cands.push_back({"LRL", t, p, mod2pi(b - a - t + p), true});
    }
  }

  std::vector<DubinsPath> out;
  for (const auto& c : cands) {
    DubinsPath path{c.word, {c.t * radius, c.p * radius, c.q * radius}};
    // A word's closed form is only trusted once its endpoint is confirmed.
    geom::Pose end = start;
    for (int i = 0; i < 3; ++i) end = advance(end, kappa_of(path.word[i], radius), path.lengths[i]);
    if (geom::distance(end.position, goal.position) < 1e-6 * std::max(1.0, radius) + 1e-6 &&
        std::abs(geom::wrap_angle(end.heading - goal.heading)) < 1e-6) {
      out.push_back(path);
    }
  }
  std::sort(out.begin(), out.end(), [](const DubinsPath& x, const DubinsPath& y) {
    if (x.total() != y.total()) return x.total() < y.total();
    return x.word < y.word;
  });
  return out;
}

std::vector<geom::Pose> sample_dubins(const geom::Pose& start, const DubinsPath& path, double radius, double ds) {
  std::vector<geom::Pose> out{start};
  geom::Pose seg_start = start;
  for (int i = 0; i < 3; ++i) {
    const double len = path.lengths[i];
    const double k = kappa_of(path.word[i], radius);
    const int n = static_cast<int>(std::ceil(len / ds));
    for (int j = 1; j <= n; ++j) out.push_back(advance(seg_start, k, std::min(len, j * ds)));
    seg_start = advance(seg_start, k, len);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hybrid A*

namespace {

bool pose_collides(const geom::Pose& p, std::span<const Obstacle> obstacles, double footprint) {
  for (const auto& o : obstacles) {
    if (geom::distance(p.position, o.position) < footprint + o.radius) return true;
  }
  return false;
}

bool poses_collide(std::span<const geom::Pose> poses, std::span<const Obstacle> obstacles, double footprint) {
  return std::any_of(poses.begin(), poses.end(),
                     [&](const geom::Pose& p) { return pose_collides(p, obstacles, footprint); });
}

double path_length(std::span<const geom::Pose> poses) {
  double l = 0.0;
  for (std::size_t i = 1; i < poses.size(); ++i) l += geom::distance(poses[i - 1].position, poses[i].position);
  return l;
}

double heading_change(std::span<const geom::Pose> poses) {
  double h = 0.0;
  for (std::size_t i = 1; i < poses.size(); ++i) h += std::abs(geom::wrap_angle(poses[i].heading - poses[i - 1].heading));
  return h;
}

}  // namespace

PlannedPath plan_path(const geom::Pose& start, const geom::Pose& goal, std::span<const Obstacle> obstacles,
                      const ShuttleConfig& c) {
  const double fp = c.footprint_radius;
  if (pose_collides(goal, obstacles, fp)) throw NoPath("goal pose is blocked");
  if (pose_collides(start, obstacles, fp)) throw NoPath("start pose is in collision");

  const double heading_tol = c.goal_heading_tolerance_deg * kDegToRad;
  auto at_goal = [&](const geom::Pose& p) {
    return geom::distance(p.position, goal.position) <= c.goal_tolerance &&
           std::abs(geom::wrap_angle(p.heading - goal.heading)) <= heading_tol;
  };

  const double margin = 15.0;
  const double xmin = std::min(start.position.x, goal.position.x) - margin;
  const double xmax = std::max(start.position.x, goal.position.x) + margin;
  const double ymin = std::min(start.position.y, goal.position.y) - margin;
  const double ymax = std::max(start.position.y, goal.position.y) + margin;

  struct Node {
    geom::Pose pose;
    double g;
    std::int64_t parent;
    double kappa;
  };
  std::vector<Node> nodes;
  nodes.push_back({start, 0.0, -1, 0.0});

  const double bin = 2.0 * kPi / c.heading_bins;
  auto key = [&](const geom::Pose& p) {
    const auto ix = static_cast<std::int64_t>(std::floor(p.position.x / c.grid));
    const auto iy = static_cast<std::int64_t>(std::floor(p.position.y / c.grid));
    auto ih = static_cast<std::int64_t>(std::lround(mod2pi(p.heading) / bin)) % c.heading_bins;
    return (ix * 1000003LL + iy) * 64 + ih;
  };

  using Entry = std::tuple<double, std::uint64_t, std::size_t>;  // f, insertion order, node
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  std::uint64_t order = 0;
  open.push({geom::distance(start.position, goal.position), order++, 0});
  std::unordered_map<std::int64_t, bool> closed;

  auto reconstruct = [&](std::size_t idx) {
    std::vector<std::size_t> chain;
    for (std::int64_t i = static_cast<std::int64_t>(idx); i >= 0; i = nodes[i].parent) chain.push_back(i);
    std::reverse(chain.begin(), chain.end());
    std::vector<geom::Pose> poses{nodes[chain.front()].pose};
    for (std::size_t k = 1; k < chain.size(); ++k) {
      const auto& from = nodes[chain[k - 1]].pose;
      const double kap = nodes[chain[k]].kappa;
      for (int j = 1; j <= 5; ++j) poses.push_back(advance(from, kap, c.primitive_step * j / 5.0));
    }
    return poses;
  };

  const std::array<double, 3> kappas{0.0, 1.0 / c.r_min, -1.0 / c.r_min};
  std::size_t expansions = 0;
  while (!open.empty()) {
    const auto [f, ord, idx] = open.top();
    open.pop();
    const Node node = nodes[idx];
    const auto k = key(node.pose);
    if (idx != 0 && closed.count(k)) continue;
    closed[k] = true;
    if (++expansions > c.max_expansions) throw NoPath("expansion budget exhausted");

    if (idx != 0 && at_goal(node.pose)) {
      PlannedPath out;
      out.poses = reconstruct(idx);
      out.length = path_length(out.poses);
      out.cost = node.g;
      out.expansions = expansions;
      return out;
    }

    for (const auto& dp : dubins_paths(node.pose, goal, c.r_min)) {
      auto tail = sample_dubins(node.pose, dp, c.r_min, 0.1);
      if (poses_collide(tail, obstacles, fp)) continue;
      PlannedPath out;
      out.poses = reconstruct(idx);
      out.poses.insert(out.poses.end(), tail.begin() + 1, tail.end());
      out.length = path_length(out.poses);
      out.cost = node.g + dp.total() + c.heading_cost * heading_change(tail);
      out.expansions = expansions;
      return out;
    }

    for (double kap : kappas) {
      std::array<geom::Pose, 5> sub;
      bool blocked = false;
      for (int j = 0; j < 5; ++j) {
        sub[j] = advance(node.pose, kap, c.primitive_step * (j + 1) / 5.0);
        if (pose_collides(sub[j], obstacles, fp)) {
          blocked = true;
          break;
        }
      }
      if (blocked) continue;
      const auto& child = sub.back();
      if (child.position.x < xmin || child.position.x > xmax || child.position.y < ymin || child.position.y > ymax) {
        continue;
      }
      if (closed.count(key(child))) continue;
      const double g = node.g + c.primitive_step + c.heading_cost * std::abs(kap * c.primitive_step);
      nodes.push_back({child, g, static_cast<std::int64_t>(idx), kap});
      open.push({g + geom::distance(child.position, goal.position), order++, nodes.size() - 1});
    }
  }
  throw NoPath("open set exhausted");
}

Trajectory time_parameterize(std::span<const geom::Pose> poses, double v0, double v_cap, TrajectorySource source,
                             SimTime now, const ShuttleConfig& config) {
  Trajectory t;
  t.source = source;
  t.computed_at = now;
  if (poses.empty()) return t;
  std::vector<double> cum{0.0};
  for (std::size_t i = 1; i < poses.size(); ++i) {
    cum.push_back(cum.back() + geom::distance(poses[i - 1].position, poses[i].position));
  }
  const double len = cum.back();
  auto pose_at = [&](double s) -> geom::Pose {
    if (s <= 0.0 || poses.size() == 1) return poses.front();
    if (s >= len) return poses.back();
    auto it = std::upper_bound(cum.begin(), cum.end(), s);
    const std::size_t j = static_cast<std::size_t>(it - cum.begin());
    const std::size_t i = j - 1;
    const double seg = cum[j] - cum[i];
    const double u = seg > 0 ? (s - cum[i]) / seg : 0.0;
    geom::Pose p;
    p.position = poses[i].position + (poses[j].position - poses[i].position) * u;
    p.heading = geom::wrap_angle(poses[i].heading + geom::wrap_angle(poses[j].heading - poses[i].heading) * u);
    return p;
  };
  if (len <= 1e-9) {
    t.samples.push_back({0.0, poses.front().position.x, poses.front().position.y, poses.front().heading, 0.0});
    t.samples.push_back({config.sample_dt, poses.front().position.x, poses.front().position.y, poses.front().heading, 0.0});
    return t;
  }
  const auto prof = speed_profile(0.0, v0, len, 0.0, [v_cap](double) { return v_cap; }, config, true);
  for (std::size_t i = 0; i < prof.s.size(); ++i) {
    const auto p = pose_at(prof.s[i]);
    t.samples.push_back({i * config.sample_dt, p.position.x, p.position.y, p.heading, prof.v[i]});
  }
  return t;
}

Trajectory docking_plan(const VehicleState& state, const geom::Pose& target, const ObstacleSet& obstacles,
                        SimTime now, const ShuttleConfig& config) {
  if (geom::distance(state.pose.position, target.position) > config.docking_max_range) {
    throw NoPath("docking target beyond range");
  }
  std::vector<Obstacle> snapshot;
  for (const auto& o : obstacles.objects) {
    Obstacle s = o;
    s.position = o.predicted(now);
    s.velocity = {};
    s.observed_at = now;
    snapshot.push_back(s);
  }
  const auto path = plan_path(state.pose, target, snapshot, config);
  auto traj = time_parameterize(path.poses, state.speed, config.docking_speed, TrajectorySource::Docking, now, config);
  traj.compute_duration = 0.005 + path.expansions * config.expansion_cost_s;
  return traj;
}

Trajectory controlled_stop(const VehicleState& state, SimTime now, const ShuttleConfig& config) {
  Trajectory t;
  t.source = TrajectorySource::ControlledStop;
  t.computed_at = now;
  const geom::Vec2 dir = geom::unit_from_heading(state.pose.heading);
  double v = state.speed;
  double s = 0.0;
  const int n = static_cast<int>(std::lround(config.horizon / config.sample_dt));
  for (int i = 0; i <= n; ++i) {
    const geom::Vec2 p = state.pose.position + dir * s;
    t.samples.push_back({i * config.sample_dt, p.x, p.y, state.pose.heading, v});
    const double v_next = std::max(0.0, v - config.comfort_decel * config.sample_dt);
    s += 0.5 * (v + v_next) * config.sample_dt;
    v = v_next;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Broker

std::string handover_violation(const Trajectory& candidate, const VehicleState& state, SimTime now,
                               const ShuttleConfig& config) {
  if (candidate.empty()) return "empty trajectory";
  if (candidate.compute_duration > config.max_compute) return "compute time above limit";
  if (candidate.exhausted(now)) return "trajectory already ended";
  if (candidate.computed_at > now) return "trajectory starts in the future";
  const auto s = candidate.sample_at(now);
  if (geom::distance({s.x, s.y}, state.pose.position) > config.eps_position) return "start position outside window";
  if (std::abs(geom::wrap_angle(s.heading - state.pose.heading)) > config.eps_heading_deg * kDegToRad) {
    return "start heading outside window";
  }
  return {};
}

SwitchDecision switch_box(const std::optional<Trajectory>& active, std::span<const Trajectory> candidates,
                          const VehicleState& state, SimTime now, const ShuttleConfig& config) {
  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return priority(candidates[a].source) > priority(candidates[b].source);
  });
  SwitchDecision d;
  for (std::size_t i : order) {
    const auto why = handover_violation(candidates[i], state, now, config);
    if (why.empty()) {
      d.trajectory = candidates[i];
      d.outcome = SwitchOutcome::Selected;
      d.candidate_index = i;
      return d;
    }
    d.rejections.push_back(std::string(to_string(candidates[i].source)) + ": " + why);
  }
  if (active && !active->exhausted(now)) {
    d.trajectory = *active;
    d.outcome = SwitchOutcome::RetainedActive;
    return d;
  }
  d.trajectory = controlled_stop(state, now, config);
  d.outcome = SwitchOutcome::ControlledStop;
  return d;
}

// ---------------------------------------------------------------------------
// Yielding

std::optional<ZoneInterval> match_map(const crossing::MapView& map, const RoutePlan& route) {
  if (map.vehicle_lane.empty() || map.conflict_zone.size() < 3) return std::nullopt;
  const auto interval = route.path.interval_inside(map.conflict_zone, 0.05);
  if (!interval) return std::nullopt;
  const geom::Vec2 entry = route.path.point_at(interval->first);
  if (map.vehicle_lane.project(entry).distance > 2.0) return std::nullopt;
  return interval;
}

YieldResult yield_decision(const std::optional<SpatemView>& spatem, std::optional<ZoneInterval> zone,
                           std::uint8_t signal_group, const VehicleState& state, SimTime now,
                           const ShuttleConfig& config) {
  YieldResult r;
  if (!zone) {
    r.reason = YieldReason::NoMapMatch;
    return r;
  }
  YieldReason red_reason = YieldReason::Red;
  if (!spatem || now - spatem->received_at > from_seconds(config.spatem_stale)) {
    red_reason = YieldReason::FailSafe;
  } else {
    bool found = false;
    for (const auto& m : spatem->spatem.movements) {
      if (m.signal_group_id != signal_group) continue;
      found = true;
      if (m.event_state == codec::EventState::ProtectedMovementAllowed) {
        r.reason = YieldReason::Green;
        return r;
      }
    }
    if (!found) red_reason = YieldReason::FailSafe;
  }
  const double stop_s = zone->first - config.zone_stop_offset;
  if (state.route_s > stop_s + 0.05) {
    r.reason = YieldReason::Passed;
    return r;
  }
  const double d = stop_s - state.route_s;
  if (d < state.speed * state.speed / (2.0 * config.emergency_decel)) {
    r.reason = YieldReason::Infeasible;
    return r;
  }
  r.stop_s = stop_s;
  r.reason = red_reason;
  return r;
}

// ---------------------------------------------------------------------------
// Fusion

FusionResult fuse_obstacles(std::span<const OnboardDetection> onboard, std::span<const CpmView> cpms,
                            const StationRegistry& stations, geom::Vec2 self_position, SimTime now,
                            std::uint64_t epoch_ms, const ShuttleConfig& config) {
  FusionResult r;
  for (const auto& d : onboard) {
    Obstacle o;
    o.position = d.position;
    o.velocity = d.velocity;
    o.radius = d.radius;
    o.source = ObstacleSource::Onboard;
    o.observed_at = now;
    o.stale_after = now + from_seconds(config.cpm_stale);
    r.obstacles.objects.push_back(o);
  }
  const std::size_t n_onboard = r.obstacles.objects.size();
  for (const auto& view : cpms) {
    auto st = stations.find(view.station_id);
    if (st == stations.end()) {
      ++r.unknown_station;
      continue;
    }
    const SimTime observed = static_cast<SimTime>(view.cpm.reference_time - epoch_ms) * kNanosPerMilli;
    if (now - observed > from_seconds(config.cpm_stale)) {
      ++r.stale;
      continue;
    }
    for (const auto& obj : view.cpm.objects) {
      Obstacle o;
      o.position = st->second + geom::Vec2{obj.dx / 100.0, obj.dy / 100.0};
      o.velocity = {obj.vx / 100.0, obj.vy / 100.0};
      o.radius = obj.footprint_radius / 100.0;
      o.source = ObstacleSource::Cpm;
      o.station_id = view.station_id;
      o.observed_at = observed;
      o.stale_after = observed + from_seconds(config.cpm_stale);
      const geom::Vec2 now_pos = o.predicted(now);
      if (obj.classification == codec::ObjectClass::Unknown && o.radius >= config.self_filter_radius &&
          geom::distance(now_pos, self_position) <= config.self_filter_distance) {
        ++r.self_filtered;
        continue;
      }
      bool merged = false;
      for (std::size_t i = 0; i < n_onboard; ++i) {
        auto& ob = r.obstacles.objects[i];
        if (geom::distance(ob.position, now_pos) <= config.merge_radius) {
          ob.radius = std::max(ob.radius, o.radius);
          merged = true;
          break;
        }
      }
      if (merged) {
        ++r.merged;
        continue;
      }
      r.obstacles.objects.push_back(o);
    }
  }
  r.obstacles.purge(now);
  return r;
}

codec::CamPayload emit_cam(const VehicleState& state, const MissionInfo& mission, std::uint8_t doors,
                           codec::Indicator indicator, const geo::GeoAnchor& anchor, SimTime now,
                           std::uint64_t epoch_ms) {
  codec::CamPayload cam;
  const std::uint64_t ms = epoch_ms + static_cast<std::uint64_t>(now / kNanosPerMilli);
  cam.generation_delta_time = static_cast<std::uint16_t>(ms % 65536);
  std::tie(cam.latitude, cam.longitude) = anchor.to_wgs84_e7(state.pose.position);
  cam.heading = geo::enu_heading_to_cam(state.pose.heading);
  cam.speed = static_cast<std::uint16_t>(std::clamp(std::round(state.speed * 100.0), 0.0, 16382.0));
  cam.door_status = doors;
  cam.indicator_status = indicator;
  cam.mission_id = mission.mission_id;
  cam.mission_progress = std::min<std::uint16_t>(1000, mission.progress);
  return cam;
}

// ---------------------------------------------------------------------------
// Agent

ShuttleAgent::ShuttleAgent(std::uint32_t station_id, geo::GeoAnchor anchor, std::uint64_t epoch_ms,
                           StationRegistry stations, ShuttleConfig config)
    : station_id_(station_id),
      anchor_(anchor),
      epoch_ms_(epoch_ms),
      stations_(std::move(stations)),
      config_(config),
      soc_(config.soc_start) {}

void ShuttleAgent::dispatch(RoutePlan route, SimTime now) {
  if (mission_active()) throw std::logic_error("a mission is already active");
  if (route.mission_id == 0) throw std::invalid_argument("mission id 0 is reserved for no mission");
  const auto start = route.pose_at(0.0);
  if (geom::distance(start.position, state_.pose.position) > config_.eps_position) {
    throw std::invalid_argument("vehicle is not at the route start");
  }
  route_ = std::move(route);
  completed_ = false;
  mission_ = {route_->mission_id, 0};
  dwell_until_.reset();
  doors_ = 0;
  active_.reset();
  external_.reset();
  blocked_at_.reset();
  zone_.reset();
  if (map_) zone_ = match_map(*map_, *route_);
  state_.route_s = 0.0;
  driving_status_ = DrivingStatus::Autonomous;
  (void)now;
}

void ShuttleAgent::reposition(const geom::Pose& pose) {
  state_.pose = pose;
  state_.speed = 0.0;
  state_.route_s = 0.0;
  active_.reset();
}

void ShuttleAgent::abort_mission() {
  route_.reset();
  completed_ = false;
  mission_ = {};
  active_.reset();
  external_.reset();
  dwell_until_.reset();
  blocked_at_.reset();
  zone_.reset();
  doors_ = 0;
  driving_status_ = DrivingStatus::Manual;
}

std::string ShuttleAgent::offer_external(Trajectory trajectory, SimTime now) {
  trajectory.source = TrajectorySource::External;
  try {
    trajectory.validate();
  } catch (const std::invalid_argument& e) {
    return e.what();
  }
  if (!mission_active()) return "no active mission";
  auto why = handover_violation(trajectory, state_, now, config_);
  if (!why.empty()) return why;
  external_ = std::move(trajectory);
  return {};
}

void ShuttleAgent::ingest(SimTime now, const TickInputs& inputs) {
  for (std::size_t i = 0; i < inputs.received.size(); ++i) {
    const auto& msg = inputs.received[i];
    const std::uint32_t from = i < inputs.received_from.size() ? inputs.received_from[i] : msg.header.station_id;
    if (const auto* sp = std::get_if<codec::SpatemPayload>(&msg.payload)) {
      spatem_ = SpatemView{*sp, now};
    } else if (const auto* mp = std::get_if<codec::MapemPayload>(&msg.payload)) {
      auto view = crossing::decode_mapem(*mp, anchor_);
      if (view) {
        const bool changed = !map_ || map_->conflict_zone != view->conflict_zone;
        map_ = std::move(view);
        if (route_ && (changed || !zone_)) zone_ = match_map(*map_, *route_);
      }
    } else if (const auto* cp = std::get_if<codec::CpmPayload>(&msg.payload)) {
      if (!stations_.count(from)) {
        ++unknown_station_;
        continue;
      }
      cpms_[from] = CpmView{from, *cp, now};
    }
  }
}

void ShuttleAgent::update_route_s() {
  if (!route_) return;
  const auto proj = route_->path.project_window(state_.pose.position, state_.route_s - 1.0, state_.route_s + 3.0);
  state_.route_s = std::max(state_.route_s, proj.s);
}

TickReport ShuttleAgent::tick(SimTime now, const TickInputs& inputs) {
  TickReport rep;
  ingest(now, inputs);

  if (completed_ && mission_.mission_id != 0) {
    mission_ = {};
    route_.reset();
    active_.reset();
    external_.reset();
  }
  const bool dwell = dwell_until_ && now < *dwell_until_;
  doors_ = dwell ? (codec::door::kFrontOpen | codec::door::kRearOpen) : 0;

  std::vector<CpmView> views;
  for (const auto& [_, v] : cpms_) views.push_back(v);
  auto fusion = fuse_obstacles(inputs.onboard, views, stations_, state_.pose.position, now, epoch_ms_, config_);
  last_obstacles_ = fusion.obstacles;
  rep.obstacles = last_obstacles_.objects.size();

  const double dt = config_.sample_dt;
  if (route_ && !completed_ && driving_status_ == DrivingStatus::Autonomous) {
    const std::uint8_t group = map_ ? map_->vehicle_signal_group : crossing::kShuttleSignalGroup;
    rep.yield = yield_decision(spatem_, zone_, group, state_, now, config_);

    std::vector<Trajectory> cands;
    bool obstacle_stop = false;
    if (paused_) {
      if (!active_ || active_->source != TrajectorySource::ControlledStop) active_ = controlled_stop(state_, now, config_);
      external_.reset();
    } else {
      if (external_) {
        if (external_->exhausted(now)) {
          external_.reset();
        } else {
          cands.push_back(*external_);
        }
      }
      const double remaining = route_->path.length() - state_.route_s;
      if (remaining <= config_.docking_range && !route_->in_turning_segment(state_.route_s)) {
        // An active docking plan is kept while it stays clear, so the final
        // approach is not replanned from poses already inside the goal tolerance.
        if (active_ && active_->source == TrajectorySource::Docking && !active_->exhausted(now) &&
            !first_collision(*active_, last_obstacles_, config_, 0.0)) {
          cands.push_back(*active_);
        } else {
          try {
            cands.push_back(docking_plan(state_, route_->goal, last_obstacles_, now, config_));
          } catch (const NoPath&) {
          }
        }
      }
      std::optional<double> stop = rep.yield.stop_s;
      if (blocked_at_ && now - *blocked_at_ < from_seconds(config_.restart_hold) && state_.speed < kStandstill) {
        stop = stop ? std::min(*stop, state_.route_s) : state_.route_s;
      }
      try {
        auto cr = cruise_plan(state_, *route_, last_obstacles_, stop, zone_, now, config_);
        obstacle_stop = cr.obstacle_stop;
        cands.push_back(std::move(cr.trajectory));
      } catch (const OffRoute&) {
      }
    }

    SwitchDecision decision;
    if (paused_) {
      decision.trajectory = *active_;
      decision.outcome = SwitchOutcome::RetainedActive;
    } else {
      decision = switch_box(active_, cands, state_, now, config_);
    }
    Trajectory chosen = std::move(decision.trajectory);
    if (chosen.source == TrajectorySource::Docking || chosen.source == TrajectorySource::External) {
      if (first_collision(chosen, last_obstacles_, config_, 0.0, 3.0)) chosen = controlled_stop(state_, now, config_);
    }
    if (!active_ || active_->source != chosen.source) {
      const auto s0 = chosen.sample_at(now);
      rep.handover = true;
      rep.handover_position_jump = geom::distance({s0.x, s0.y}, state_.pose.position);
      rep.handover_heading_jump = std::abs(geom::wrap_angle(s0.heading - state_.pose.heading));
    }
    rep.switch_outcome = decision.outcome;
    rep.planner = chosen.source;
    if (chosen.source != TrajectorySource::External && external_ &&
        decision.outcome == SwitchOutcome::Selected && priority(chosen.source) < priority(TrajectorySource::External)) {
      external_.reset();
    }
    active_ = std::move(chosen);

    const auto now_s = active_->sample_at(now);
    const auto next = active_->sample_at(now + from_seconds(dt));
    const geom::Vec2 old_pos = state_.pose.position;
    state_.pose = {{next.x, next.y}, next.heading};
    state_.speed = next.speed;
    update_route_s();
    const double moved = geom::distance(old_pos, state_.pose.position);
    soc_ = std::max(0.0, soc_ - config_.soc_per_km * moved / 1000.0);
    if (moved > 1e-6) {
      const double kappa = geom::wrap_angle(next.heading - now_s.heading) / std::max(moved, 1e-6);
      rep.steering_angle = std::atan(config_.wheelbase * kappa);
    }
    if (obstacle_stop && state_.speed < kStandstill) blocked_at_ = now;

    indicator_ = codec::Indicator::Off;
    if (route_->in_turning_segment(state_.route_s)) {
      indicator_ = route_->path.curvature_at(state_.route_s) >= 0.0 ? codec::Indicator::Left : codec::Indicator::Right;
    }
    const double len = route_->path.length();
    const auto progress = static_cast<std::uint16_t>(std::clamp(std::floor(1000.0 * state_.route_s / len), 0.0, 999.0));
    mission_.progress = std::max(mission_.progress, progress);

    const bool at_goal = geom::distance(state_.pose.position, route_->goal.position) <= config_.goal_tolerance &&
                         std::abs(geom::wrap_angle(state_.pose.heading - route_->goal.heading)) <=
                             config_.goal_heading_tolerance_deg * kDegToRad &&
                         state_.speed < kStandstill;
    if (at_goal) {
      state_.speed = 0.0;
      mission_.progress = 1000;
      completed_ = true;
      rep.mission_completed = true;
      indicator_ = codec::Indicator::Off;
      dwell_until_ = now + from_seconds(dt) + from_seconds(config_.dwell);
    }
  } else {
    state_.speed = 0.0;
    indicator_ = codec::Indicator::Off;
  }
  rep.cam = emit_cam(state_, mission_, doors_, indicator_, anchor_, now, epoch_ms_);
  return rep;
}

}  // namespace v2xlab::shuttle
