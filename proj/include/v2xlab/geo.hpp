#pragma once

#include <cstdint>
#include <utility>

#include "v2xlab/geometry.hpp"

namespace v2xlab::geo {

/// Equirectangular ENU <-> WGS84 mapping around a scenario anchor.
/// Adequate for extents up to about a kilometre.
struct GeoAnchor {
  double lat_deg = 49.0;
  double lon_deg = 8.4;

  static constexpr double kEarthRadius = 6'371'000.0;

  geom::Vec2 to_enu(double lat_deg_in, double lon_deg_in) const;
  /// Latitude/longitude in 0.1 microdegree units, as carried by CAM/CPM/MAPEM.
  geom::Vec2 to_enu_e7(std::int32_t lat_e7, std::int32_t lon_e7) const;
  std::pair<double, double> to_wgs84(geom::Vec2 enu) const;
  std::pair<std::int32_t, std::int32_t> to_wgs84_e7(geom::Vec2 enu) const;
};

/// ENU heading (rad, CCW from east) to CAM heading (0.1 deg, CW from north), 0..3599.
std::uint16_t enu_heading_to_cam(double heading_rad);
double cam_heading_to_enu(std::uint16_t cam_heading);

}  // namespace v2xlab::geo
