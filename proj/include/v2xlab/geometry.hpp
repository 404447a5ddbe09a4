#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace v2xlab::geom {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator*(double k) const { return {x * k, y * k}; }
  constexpr bool operator==(const Vec2&) const = default;
};

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }
inline Vec2 unit_from_heading(double heading) { return {std::cos(heading), std::sin(heading)}; }

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

/// Distance from p to segment ab.
double point_segment_distance(Vec2 p, Vec2 a, Vec2 b);

using Polygon = std::vector<Vec2>;

class DegeneratePolygon : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Closed-segment intersection test, including touching and collinear overlap.
bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d);

/// Even-odd rule; points exactly on the boundary count as inside.
bool point_in_polygon(Vec2 p, const Polygon& poly);

/// True iff segment ab touches the polygon boundary or either endpoint is inside.
/// Throws DegeneratePolygon for fewer than 3 vertices.
bool segment_crosses_polygon(Vec2 a, Vec2 b, const Polygon& poly);

/// Distance from p to the polygon region (0 when inside).
double distance_to_polygon(Vec2 p, const Polygon& poly);

/// Non-self-intersecting check by pairwise edge tests (non-adjacent edges).
bool is_simple_polygon(const Polygon& poly);

struct Pose {
  Vec2 position;
  double heading = 0.0;  // radians, ENU, counter-clockwise from east
  bool operator==(const Pose&) const = default;
};

struct Projection {
  double s = 0.0;        // arc length of the foot point
  double lateral = 0.0;  // signed, positive to the left of travel
  double distance = 0.0; // |lateral| unless clamped at an end
};

/// Piecewise-linear path with cumulative arc length.
class Polyline {
 public:
  Polyline() = default;
  explicit Polyline(std::vector<Vec2> points);

  const std::vector<Vec2>& points() const { return points_; }
  double length() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }
  bool empty() const { return points_.size() < 2; }

  Vec2 point_at(double s) const;
  double heading_at(double s) const;
  /// Signed curvature estimated from neighboring segment headings.
  double curvature_at(double s) const;

  Projection project(Vec2 p) const;
  /// Projection restricted to arc lengths in [s_lo, s_hi].
  Projection project_window(Vec2 p, double s_lo, double s_hi) const;

  /// First and last arc length inside the polygon, sampled at `step`.
  std::optional<std::pair<double, double>> interval_inside(const Polygon& poly,
                                                           double step = 0.05) const;

  Polyline reversed() const;
  bool operator==(const Polyline& o) const { return points_ == o.points_; }

 private:
  std::size_t segment_index(double s) const;

  std::vector<Vec2> points_;
  std::vector<double> cumulative_;
};

}  // namespace v2xlab::geom
