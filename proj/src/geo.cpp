#include "mepoi/geo.hpp"

#include <cmath>

namespace mepoi {

namespace {
constexpr double kDegToRad = 0.017453292519943295;
constexpr double kRadToDeg = 57.29577951308232;
}

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  const double phi1 = lat1 * kDegToRad;
  const double phi2 = lat2 * kDegToRad;
  const double dphi = (lat2 - lat1) * kDegToRad;
  const double dlam = (lon2 - lon1) * kDegToRad;
  const double s1 = std::sin(dphi * 0.5);
  const double s2 = std::sin(dlam * 0.5);
  const double a = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(std::min(1.0, a)));
}

double bearing_deg(double lat1, double lon1, double lat2, double lon2) {
  const double phi1 = lat1 * kDegToRad;
  const double phi2 = lat2 * kDegToRad;
  const double dlam = (lon2 - lon1) * kDegToRad;
  const double y = std::sin(dlam) * std::cos(phi2);
  const double x = std::cos(phi1) * std::sin(phi2) - std::sin(phi1) * std::cos(phi2) * std::cos(dlam);
  double deg = std::atan2(y, x) * kRadToDeg;
  if (deg < 0.0) deg += 360.0;
  if (deg >= 360.0) deg -= 360.0;
  return deg;
}

const char* compass8(double bearing) {
  static const char* kNames[8] = {"N", "NE", "E", "SE", "S", "SW", "W", "NW"};
  int sector = static_cast<int>(std::floor((bearing + 22.5) / 45.0));
  sector %= 8;
  if (sector < 0) sector += 8;
  return kNames[sector];
}

LatLon offset_meters(const LatLon& p, double north_m, double east_m) {
  const double m_per_deg_lat = 1000.0 * kEarthRadiusKm * kDegToRad;
  const double m_per_deg_lon = m_per_deg_lat * std::cos(p.lat * kDegToRad);
  return LatLon{p.lat + north_m / m_per_deg_lat, p.lon + east_m / m_per_deg_lon};
}

bool point_in_polygon(double lat, double lon, const std::vector<LatLon>& ring) {
  bool inside = false;
  const std::size_t n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double yi = ring[i].lat, xi = ring[i].lon;
    const double yj = ring[j].lat, xj = ring[j].lon;
    const bool crosses = (yi > lat) != (yj > lat);
    if (crosses && lon < (xj - xi) * (lat - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

}  // namespace mepoi
