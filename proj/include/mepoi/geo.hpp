#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mepoi {

constexpr double kEarthRadiusKm = 6371.0088;
constexpr int kWeekBins = 168;  // 7 days x 24 hours

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

struct BBox {
  double min_lat = 0.0;
  double min_lon = 0.0;
  double max_lat = 0.0;
  double max_lon = 0.0;

  bool contains(double lat, double lon) const {
    return lat >= min_lat && lat <= max_lat && lon >= min_lon && lon <= max_lon;
  }
};

// Great-circle distance in kilometers.
double haversine_km(double lat1, double lon1, double lat2, double lon2);
inline double haversine_km(const LatLon& a, const LatLon& b) {
  return haversine_km(a.lat, a.lon, b.lat, b.lon);
}

// Initial bearing from a to b, degrees clockwise from north in [0, 360).
double bearing_deg(double lat1, double lon1, double lat2, double lon2);

// Quantizes a bearing into one of the eight compass sectors, N first, each
// 45 degrees wide and centered on its heading.
const char* compass8(double bearing);

// Local equirectangular offset: moves (north_m, east_m) meters from p.
// Good to well under a meter at city scale, which is all we need.
LatLon offset_meters(const LatLon& p, double north_m, double east_m);

// Even-odd ray casting in lat/lon space. Points exactly on an edge count as
// inside often enough for our synthetic footprints; no geodesic correction.
bool point_in_polygon(double lat, double lon, const std::vector<LatLon>& ring);

// UTC week position helpers. Day-of-week uses Monday = 0; the Unix epoch was
// a Thursday, hence the +3 shift.
inline int day_of_week(std::int64_t ts_utc) {
  return static_cast<int>(((ts_utc / 86400) + 3) % 7);
}
inline int weekly_bin(std::int64_t ts_utc) {
  return day_of_week(ts_utc) * 24 + static_cast<int>((ts_utc % 86400) / 3600);
}
inline double hour_frac(std::int64_t ts_utc) {
  return static_cast<double>(ts_utc % 86400) / 86400.0;
}
inline double day_frac(std::int64_t ts_utc) {
  return static_cast<double>(day_of_week(ts_utc)) / 7.0;
}

}  // namespace mepoi
