#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mepoi/geo.hpp"
#include "mepoi/world.hpp"

namespace mepoi {

constexpr std::int64_t kUnknownPoi = -1;

struct PipelineConfig {
  double staypoint_radius_m = 100.0;
  double staypoint_min_duration_s = 300.0;
  double snap_radius_m = 100.0;
  int min_sequence_len = 5;
};

struct Staypoint {
  std::int64_t device_id = 0;
  std::int64_t arrive = 0;
  std::int64_t depart = 0;
  double lat = 0.0;  // centroid of the member fixes
  double lon = 0.0;
};

struct Visit {
  std::int64_t device_id = 0;
  std::int64_t poi_id = kUnknownPoi;
  std::int64_t arrive = 0;
  std::int64_t depart = 0;
  double lat = 0.0;
  double lon = 0.0;
};

struct VisitDistribution {
  std::int64_t poi_id = 0;
  std::int64_t count = 0;              // attributed visits backing the histogram
  std::vector<double> bins;            // 168 bins, sums to 1 when count > 0
};

struct Partition {
  std::vector<std::int64_t> anchors;   // sorted by id
  std::vector<std::int64_t> sparse;    // sorted by id, includes zero-visit POIs
};

// Greedy detection on one device's fixes, which must have strictly
// increasing timestamps. A window anchored at a fix grows while every fix
// stays within the radius of the anchor; when it breaks (or the trace ends),
// the window becomes a staypoint if it spans at least the minimum duration,
// and scanning resumes at the first fix outside it.
std::vector<Staypoint> detect_staypoints(const std::vector<GpsPoint>& fixes, const PipelineConfig& cfg);

// Groups fixes by device (input must be sorted by device, then time) and runs
// detection per device.
std::vector<Staypoint> detect_staypoints_all(const std::vector<GpsPoint>& points, const PipelineConfig& cfg);

// Nearest-POI index over centroids, with polygon containment tried first.
class PoiIndex {
 public:
  explicit PoiIndex(const std::vector<Poi>& pois);

  // Attribution: smallest-id polygon containing the point wins; otherwise the
  // nearest centroid within the snap radius, ties broken by smaller id;
  // otherwise kUnknownPoi.
  std::int64_t attribute(double lat, double lon, double snap_radius_m) const;

 private:
  const std::vector<Poi>& pois_;
  double cell_deg_;
  double max_polygon_radius_m_;
  std::vector<std::vector<std::size_t>> buckets_;
  std::vector<std::int64_t> bucket_keys_;
  std::int64_t cell_key(double lat, double lon) const;
  std::size_t find_bucket(std::int64_t key) const;
};

std::vector<Visit> attribute_staypoints(const std::vector<Staypoint>& stays, const std::vector<Poi>& pois,
                                        const PipelineConfig& cfg);

// Per-device visit sequences ordered by arrival time; devices with fewer
// than min_sequence_len visits are dropped entirely.
std::vector<std::vector<Visit>> build_sequences(const std::vector<Visit>& visits, const PipelineConfig& cfg);

// Empirical weekly arrival histograms per POI over attributed visits in the
// kept sequences. POIs with no visits get a zero histogram and count 0.
std::vector<VisitDistribution> visit_distributions(const std::vector<std::vector<Visit>>& sequences,
                                                   std::int64_t poi_count);

// Anchor/sparse split by visit count. threshold mode: count >= min_visits is
// an anchor (boundary counts included). top_k > 0 switches to keeping the k
// most visited POIs as anchors, ties broken by smaller id. Errors out when no
// POI qualifies, since downstream transfer needs at least one anchor.
Partition partition_pois(const std::vector<VisitDistribution>& dists, std::int64_t min_visits, int top_k = 0);

void write_visits_jsonl(const std::string& path, const std::vector<std::vector<Visit>>& sequences);
std::vector<std::vector<Visit>> load_visits_jsonl(const std::string& path);
void write_distributions_jsonl(const std::string& path, const std::vector<VisitDistribution>& dists);
std::vector<VisitDistribution> load_distributions_jsonl(const std::string& path);
void write_partition_json(const std::string& path, const Partition& partition, std::int64_t min_visits, int top_k);
Partition load_partition_json(const std::string& path);

}  // namespace mepoi
