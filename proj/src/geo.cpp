#include "v2xlab/geo.hpp"

#include <cmath>
#include <numbers>

namespace v2xlab::geo {

namespace {
constexpr double kDegToRad = std::numbers::pi / 180.0;
}

geom::Vec2 GeoAnchor::to_enu(double lat, double lon) const {
  const double x = kEarthRadius * std::cos(lat_deg * kDegToRad) * (lon - lon_deg) * kDegToRad;
  const double y = kEarthRadius * (lat - lat_deg) * kDegToRad;
  return {x, y};
}

geom::Vec2 GeoAnchor::to_enu_e7(std::int32_t lat_e7, std::int32_t lon_e7) const {
  return to_enu(lat_e7 * 1e-7, lon_e7 * 1e-7);
}

std::pair<double, double> GeoAnchor::to_wgs84(geom::Vec2 enu) const {
  const double lat = lat_deg + enu.y / kEarthRadius / kDegToRad;
  const double lon = lon_deg + enu.x / (kEarthRadius * std::cos(lat_deg * kDegToRad)) / kDegToRad;
  return {lat, lon};
}

std::pair<std::int32_t, std::int32_t> GeoAnchor::to_wgs84_e7(geom::Vec2 enu) const {
  const auto [lat, lon] = to_wgs84(enu);
  return {static_cast<std::int32_t>(std::llround(lat * 1e7)),
          static_cast<std::int32_t>(std::llround(lon * 1e7))};
}

std::uint16_t enu_heading_to_cam(double heading_rad) {
  double deg = 90.0 - heading_rad / kDegToRad;
  deg = std::fmod(deg, 360.0);
  if (deg < 0) deg += 360.0;
  auto units = static_cast<long>(std::lround(deg * 10.0));
  if (units >= 3600) units -= 3600;
  return static_cast<std::uint16_t>(units);
}

double cam_heading_to_enu(std::uint16_t cam_heading) {
  return geom::wrap_angle((90.0 - cam_heading / 10.0) * kDegToRad);
}

}  // namespace v2xlab::geo
