#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mepoi/geo.hpp"

namespace mepoi {

// Hidden per-POI state the generator commits to before any trace is sampled.
// Labels for the probing tasks all derive from these fields.
struct GroundTruth {
  std::array<std::uint8_t, kWeekBins> open_hours{};  // 1 = open during that weekly hour
  int price_level = 0;                               // ordinal 0..3
  int visit_intent = 0;                              // ordinal 0..3, tied to popularity
  std::vector<double> busyness;                      // 168 values in [0,1], zero when closed
  bool closed = false;
  std::int64_t closure_ts = 0;                       // no stays at or after this time when closed
  std::vector<double> usage_profile;                 // 168-bin arrival distribution, sums to 1
  double popularity = 0.0;                           // relative visit rate
};

struct Poi {
  std::int64_t id = 0;
  LatLon location;
  std::vector<LatLon> polygon;  // empty when the POI has no footprint
  std::string category;
  std::string name;
  std::string address;
  int neighborhood = 0;
  GroundTruth truth;
};

struct WorldConfig {
  BBox bbox{29.55, -95.56, 29.95, -95.16};
  std::int64_t poi_count = 1000;
  std::int64_t device_count = 500;
  int duration_days = 14;
  std::int64_t start_timestamp = 1736121600;  // a Monday 00:00 UTC
  int neighborhood_count = 25;
  double neighborhood_sigma_km = 0.5;
  // Weight of the shared neighborhood rhythm in each POI's usage profile:
  // 1 makes every POI in a neighborhood identical, 0 makes profiles fully
  // idiosyncratic.
  double neighborhood_correlation = 0.7;
  double popularity_exponent = 1.3;
  double visits_per_device_day = 8.0;
  double closed_fraction = 0.10;
  double closure_date_frac = 0.0;  // fraction into the period at which closed POIs stop
  double polygon_fraction = 0.4;
  double profile_jitter_hours = 2.0;
  double min_poi_spacing_m = 60.0;
  double stay_jitter_m = 12.0;
  double stay_point_interval_s = 90.0;
  double dwell_median_min = 25.0;
  double dwell_log_sigma = 0.8;
  double transit_speed_mps = 12.0;
  std::uint64_t seed = 7;
};

struct World {
  WorldConfig config;
  std::vector<Poi> pois;
  std::vector<LatLon> neighborhood_centers;
  std::vector<std::string> neighborhood_names;
};

struct GpsPoint {
  std::int64_t device_id = 0;
  std::int64_t ts = 0;
  double lat = 0.0;
  double lon = 0.0;
};

// True stays, kept around for validating the recovery pipeline in tests.
struct StayEvent {
  std::int64_t device_id = 0;
  std::int64_t poi_id = 0;
  std::int64_t arrive = 0;
  std::int64_t depart = 0;
};

World generate_world(const WorldConfig& cfg);

// Samples device trajectories against the world's profiles and emits noisy
// GPS fixes: jittered points during stays, sparse interpolated points in
// transit. Points come out sorted by (device, ts) with strictly increasing
// timestamps per device. Optionally reports the true stays.
std::vector<GpsPoint> simulate_traces(const World& world, std::vector<StayEvent>* stays_out = nullptr);

void write_world_jsonl(const std::string& path, const World& world);
World load_world_jsonl(const std::string& path);
void write_labels_jsonl(const std::string& path, const World& world);
void write_traces_csv(const std::string& path, const std::vector<GpsPoint>& points);
std::vector<GpsPoint> load_traces_csv(const std::string& path);

}  // namespace mepoi
