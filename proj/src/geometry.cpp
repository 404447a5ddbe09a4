#include "v2xlab/geometry.hpp"

#include <algorithm>
#include <limits>

namespace v2xlab::geom {

double wrap_angle(double a) {
  a = std::fmod(a + std::numbers::pi, 2.0 * std::numbers::pi);
  if (a <= 0.0) a += 2.0 * std::numbers::pi;
  return a - std::numbers::pi;
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return distance(p, a);
  const double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
  return distance(p, a + ab * t);
}

namespace {

int orientation(Vec2 a, Vec2 b, Vec2 c) {
  const double v = cross(b - a, c - a);
  constexpr double kEps = 1e-12;
  if (v > kEps) return 1;
  if (v < -kEps) return -1;
  return 0;
}

bool on_segment(Vec2 a, Vec2 b, Vec2 p) {
  return std::min(a.x, b.x) - 1e-12 <= p.x && p.x <= std::max(a.x, b.x) + 1e-12 &&
         std::min(a.y, b.y) - 1e-12 <= p.y && p.y <= std::max(a.y, b.y) + 1e-12;
}

}  // namespace

bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  const int o1 = orientation(a, b, c);
  const int o2 = orientation(a, b, d);
  const int o3 = orientation(c, d, a);
  const int o4 = orientation(c, d, b);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(a, b, c)) return true;
  if (o2 == 0 && on_segment(a, b, d)) return true;
  if (o3 == 0 && on_segment(c, d, a)) return true;
  if (o4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

bool point_in_polygon(Vec2 p, const Polygon& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2 a = poly[i];
    const Vec2 b = poly[j];
    if (point_segment_distance(p, a, b) < 1e-12) return true;
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

bool segment_crosses_polygon(Vec2 a, Vec2 b, const Polygon& poly) {
  if (poly.size() < 3) throw DegeneratePolygon("polygon needs at least 3 vertices");
  if (point_in_polygon(a, poly) || point_in_polygon(b, poly)) return true;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    if (segments_intersect(a, b, poly[i], poly[(i + 1) % poly.size()])) return true;
  }
  return false;
}

double distance_to_polygon(Vec2 p, const Polygon& poly) {
  if (point_in_polygon(p, poly)) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < poly.size(); ++i) {
    best = std::min(best, point_segment_distance(p, poly[i], poly[(i + 1) % poly.size()]));
  }
  return best;
}

bool is_simple_polygon(const Polygon& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) return false;
    }
  }
  return true;
}

Polyline::Polyline(std::vector<Vec2> points) : points_(std::move(points)) {
  cumulative_.reserve(points_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (i > 0) acc += distance(points_[i - 1], points_[i]);
    cumulative_.push_back(acc);
  }
}

std::size_t Polyline::segment_index(double s) const {
  if (points_.size() < 2) return 0;
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  std::size_t idx = it == cumulative_.begin() ? 0 : static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  return std::min(idx, points_.size() - 2);
}

Vec2 Polyline::point_at(double s) const {
  if (points_.empty()) return {};
  if (points_.size() == 1) return points_.front();
  s = std::clamp(s, 0.0, length());
  const std::size_t i = segment_index(s);
  const double seg = cumulative_[i + 1] - cumulative_[i];
  const double t = seg > 0 ? (s - cumulative_[i]) / seg : 0.0;
  return points_[i] + (points_[i + 1] - points_[i]) * t;
}

double Polyline::heading_at(double s) const {
  if (points_.size() < 2) return 0.0;
  std::size_t i = segment_index(std::clamp(s, 0.0, length()));
  // Skip zero-length segments.
  while (i + 2 < points_.size() && cumulative_[i + 1] == cumulative_[i]) ++i;
  const Vec2 d = points_[i + 1] - points_[i];
  return std::atan2(d.y, d.x);
}

double Polyline::curvature_at(double s) const {
  constexpr double kWindow = 0.25;
  const double lo = std::max(0.0, s - kWindow);
  const double hi = std::min(length(), s + kWindow);
  if (hi - lo < 1e-9) return 0.0;
  return wrap_angle(heading_at(hi) - heading_at(lo)) / (hi - lo);
}

Projection Polyline::project(Vec2 p) const { return project_window(p, 0.0, length()); }

Projection Polyline::project_window(Vec2 p, double s_lo, double s_hi) const {
  Projection best{0.0, 0.0, std::numeric_limits<double>::infinity()};
  if (points_.size() < 2) return best;
  s_lo = std::clamp(s_lo, 0.0, length());
  s_hi = std::clamp(s_hi, s_lo, length());
  const std::size_t first = segment_index(s_lo);
  const std::size_t last = segment_index(s_hi);
  for (std::size_t i = first; i <= last; ++i) {
    const Vec2 a = points_[i];
    const Vec2 ab = points_[i + 1] - a;
    const double len2 = dot(ab, ab);
    double t = len2 > 0 ? dot(p - a, ab) / len2 : 0.0;
    const double seg_len = std::sqrt(len2);
    double t_lo = 0.0, t_hi = 1.0;
    if (seg_len > 0) {
      t_lo = std::max(0.0, (s_lo - cumulative_[i]) / seg_len);
      t_hi = std::min(1.0, (s_hi - cumulative_[i]) / seg_len);
    }
    t = std::clamp(t, t_lo, std::max(t_lo, t_hi));
    const Vec2 foot = a + ab * t;
    const double d = distance(p, foot);
    if (d < best.distance) {
      best.distance = d;
      best.s = cumulative_[i] + t * seg_len;
      const double side = seg_len > 0 ? cross(ab, p - a) / seg_len : 0.0;
      best.lateral = side;
    }
  }
  return best;
}

std::optional<std::pair<double, double>> Polyline::interval_inside(const Polygon& poly,
                                                                   double step) const {
  std::optional<double> first, last;
  const double len = length();
  for (double s = 0.0;; s += step) {
    const double sc = std::min(s, len);
    if (point_in_polygon(point_at(sc), poly)) {
      if (!first) first = sc;
      last = sc;
    }
    if (sc >= len) break;
  }
  if (!first) return std::nullopt;
  return std::make_pair(*first, *last);
}

Polyline Polyline::reversed() const {
  std::vector<Vec2> pts(points_.rbegin(), points_.rend());
  return Polyline(std::move(pts));
}

}  // namespace v2xlab::geom
