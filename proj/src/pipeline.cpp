#include "mepoi/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "mepoi/common.hpp"

namespace mepoi {
namespace {

using json = nlohmann::json;

constexpr double kMetersPerDegLat = 111320.0;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open for reading: " + path);
  return in;
}

}  // namespace

std::vector<Staypoint> detect_staypoints(const std::vector<GpsPoint>& fixes, const PipelineConfig& cfg) {
  check(cfg.staypoint_radius_m > 0.0, "staypoint_radius_m must be positive");
  check(cfg.staypoint_min_duration_s > 0.0, "staypoint_min_duration_s must be positive");
  for (std::size_t i = 1; i < fixes.size(); ++i) {
    check(fixes[i].device_id == fixes[0].device_id, "detect_staypoints expects a single device");
    if (fixes[i].ts <= fixes[i - 1].ts) {
      throw std::invalid_argument("timestamps not strictly increasing for device " +
                                  std::to_string(fixes[0].device_id) + " at fix " + std::to_string(i));
    }
  }

  std::vector<Staypoint> stays;
  const std::size_t n = fixes.size();
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n &&
           haversine_km(fixes[i].lat, fixes[i].lon, fixes[j].lat, fixes[j].lon) * 1000.0 <= cfg.staypoint_radius_m) {
      ++j;
    }
    const double span = static_cast<double>(fixes[j - 1].ts - fixes[i].ts);
    if (span >= cfg.staypoint_min_duration_s) {
      Staypoint s;
      s.device_id = fixes[i].device_id;
      s.arrive = fixes[i].ts;
      s.depart = fixes[j - 1].ts;
      for (std::size_t m = i; m < j; ++m) {
        s.lat += fixes[m].lat;
        s.lon += fixes[m].lon;
      }
      s.lat /= static_cast<double>(j - i);
      s.lon /= static_cast<double>(j - i);
      stays.push_back(s);
      i = j;
    } else {
      ++i;
    }
  }
  return stays;
}

std::vector<Staypoint> detect_staypoints_all(const std::vector<GpsPoint>& points, const PipelineConfig& cfg) {
  std::vector<Staypoint> all;
  std::size_t start = 0;
  for (std::size_t i = 1; i <= points.size(); ++i) {
    if (i == points.size() || points[i].device_id != points[start].device_id) {
      check(i == points.size() || points[i].device_id > points[start].device_id,
            "points must be sorted by device id");
      std::vector<GpsPoint> device(points.begin() + static_cast<std::ptrdiff_t>(start),
                                   points.begin() + static_cast<std::ptrdiff_t>(i));
      auto stays = detect_staypoints(device, cfg);
      all.insert(all.end(), stays.begin(), stays.end());
      start = i;
    }
  }
  return all;
}

PoiIndex::PoiIndex(const std::vector<Poi>& pois) : pois_(pois) {
  cell_deg_ = 150.0 / kMetersPerDegLat;
  max_polygon_radius_m_ = 0.0;
  for (const Poi& p : pois_) {
    for (const LatLon& v : p.polygon) {
      max_polygon_radius_m_ = std::max(max_polygon_radius_m_, haversine_km(p.location, v) * 1000.0);
    }
  }
  std::vector<std::pair<std::int64_t, std::size_t>> entries;
  entries.reserve(pois_.size());
  for (std::size_t i = 0; i < pois_.size(); ++i) {
    entries.emplace_back(cell_key(pois_[i].location.lat, pois_[i].location.lon), i);
  }
  std::sort(entries.begin(), entries.end());
  for (const auto& [key, idx] : entries) {
    if (bucket_keys_.empty() || bucket_keys_.back() != key) {
      bucket_keys_.push_back(key);
      buckets_.emplace_back();
    }
    buckets_.back().push_back(idx);
  }
}

std::int64_t PoiIndex::cell_key(double lat, double lon) const {
  const auto qi = static_cast<std::int64_t>(std::floor(lat / cell_deg_));
  const auto qj = static_cast<std::int64_t>(std::floor(lon / cell_deg_));
  return qi * (std::int64_t{1} << 32) + qj;
}

std::size_t PoiIndex::find_bucket(std::int64_t key) const {
  const auto it = std::lower_bound(bucket_keys_.begin(), bucket_keys_.end(), key);
  if (it == bucket_keys_.end() || *it != key) return bucket_keys_.size();
  return static_cast<std::size_t>(it - bucket_keys_.begin());
}

std::int64_t PoiIndex::attribute(double lat, double lon, double snap_radius_m) const {
  check(snap_radius_m > 0.0, "snap_radius_m must be positive");
  const double reach_m = std::max(snap_radius_m, max_polygon_radius_m_);
  const double cos_lat = std::max(0.2, std::cos(lat * 3.14159265358979323846 / 180.0));
  const int ri = static_cast<int>(std::ceil(reach_m / (cell_deg_ * kMetersPerDegLat))) + 1;
  const int rj = static_cast<int>(std::ceil(reach_m / (cell_deg_ * kMetersPerDegLat * cos_lat))) + 1;

  std::int64_t inside_id = std::numeric_limits<std::int64_t>::max();
  std::int64_t nearest_id = std::numeric_limits<std::int64_t>::max();
  double nearest_m = std::numeric_limits<double>::infinity();
  for (int di = -ri; di <= ri; ++di) {
    for (int dj = -rj; dj <= rj; ++dj) {
      const std::size_t b = find_bucket(cell_key(lat + di * cell_deg_, lon + dj * cell_deg_));
      if (b == bucket_keys_.size()) continue;
      for (std::size_t idx : buckets_[b]) {
        const Poi& p = pois_[idx];
        if (!p.polygon.empty() && p.id < inside_id && point_in_polygon(lat, lon, p.polygon)) {
          inside_id = p.id;
        }
        const double d = haversine_km(lat, lon, p.location.lat, p.location.lon) * 1000.0;
        if (d > snap_radius_m) continue;
        // Strictly closer wins; exact ties fall to the smaller id.
        if (nearest_id == std::numeric_limits<std::int64_t>::max() || d < nearest_m ||
            (d == nearest_m && p.id < nearest_id)) {
          nearest_m = d;
          nearest_id = p.id;
        }
      }
    }
  }
  if (inside_id != std::numeric_limits<std::int64_t>::max()) return inside_id;
  if (nearest_id != std::numeric_limits<std::int64_t>::max()) return nearest_id;
  return kUnknownPoi;
}

std::vector<Visit> attribute_staypoints(const std::vector<Staypoint>& stays, const std::vector<Poi>& pois,
                                        const PipelineConfig& cfg) {
  PoiIndex index(pois);
  std::vector<Visit> visits;
  visits.reserve(stays.size());
  for (const Staypoint& s : stays) {
    Visit v;
    v.device_id = s.device_id;
    v.poi_id = index.attribute(s.lat, s.lon, cfg.snap_radius_m);
    v.arrive = s.arrive;
    v.depart = s.depart;
    v.lat = s.lat;
    v.lon = s.lon;
    visits.push_back(v);
  }
  return visits;
}

std::vector<std::vector<Visit>> build_sequences(const std::vector<Visit>& visits, const PipelineConfig& cfg) {
  check(cfg.min_sequence_len >= 1, "min_sequence_len must be at least 1");
  std::map<std::int64_t, std::vector<Visit>> by_device;
  for (const Visit& v : visits) by_device[v.device_id].push_back(v);
  std::vector<std::vector<Visit>> sequences;
  for (auto& [dev, seq] : by_device) {
    std::sort(seq.begin(), seq.end(), [](const Visit& a, const Visit& b) {
      if (a.arrive != b.arrive) return a.arrive < b.arrive;
      return a.depart < b.depart;
    });
    if (static_cast<int>(seq.size()) >= cfg.min_sequence_len) sequences.push_back(std::move(seq));
  }
  return sequences;
}

std::vector<VisitDistribution> visit_distributions(const std::vector<std::vector<Visit>>& sequences,
                                                   std::int64_t poi_count) {
  check(poi_count > 0, "poi_count must be positive");
  std::vector<VisitDistribution> dists(static_cast<std::size_t>(poi_count));
  for (std::int64_t i = 0; i < poi_count; ++i) {
    dists[static_cast<std::size_t>(i)].poi_id = i;
    dists[static_cast<std::size_t>(i)].bins.assign(kWeekBins, 0.0);
  }
  for (const auto& seq : sequences) {
    for (const Visit& v : seq) {
      if (v.poi_id == kUnknownPoi) continue;
      check(v.poi_id >= 0 && v.poi_id < poi_count, "visit references unknown POI id " + std::to_string(v.poi_id));
      auto& d = dists[static_cast<std::size_t>(v.poi_id)];
      d.bins[static_cast<std::size_t>(weekly_bin(v.arrive))] += 1.0;
      d.count += 1;
    }
  }
  for (auto& d : dists) {
    if (d.count == 0) continue;
    for (double& b : d.bins) b /= static_cast<double>(d.count);
  }
  return dists;
}

Partition partition_pois(const std::vector<VisitDistribution>& dists, std::int64_t min_visits, int top_k) {
  Partition part;
  if (top_k > 0) {
    check(static_cast<std::size_t>(top_k) <= dists.size(), "top_k exceeds POI count");
    std::vector<std::size_t> order(dists.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (dists[a].count != dists[b].count) return dists[a].count > dists[b].count;
      return dists[a].poi_id < dists[b].poi_id;
    });
    std::vector<bool> anchor(dists.size(), false);
    for (int i = 0; i < top_k; ++i) anchor[order[static_cast<std::size_t>(i)]] = true;
    for (std::size_t i = 0; i < dists.size(); ++i) {
      (anchor[i] ? part.anchors : part.sparse).push_back(dists[i].poi_id);
    }
  } else {
    check(min_visits >= 1, "min_visits must be at least 1");
    for (const auto& d : dists) {
      (d.count >= min_visits ? part.anchors : part.sparse).push_back(d.poi_id);
    }
  }
  std::sort(part.anchors.begin(), part.anchors.end());
  std::sort(part.sparse.begin(), part.sparse.end());
  if (part.anchors.empty()) {
    throw std::runtime_error("partition produced no anchor POIs; lower min_visits or use top_k");
  }
  return part;
}

void write_visits_jsonl(const std::string& path, const std::vector<std::vector<Visit>>& sequences) {
  std::ofstream out = open_out(path);
  for (const auto& seq : sequences) {
    for (const Visit& v : seq) {
      json j;
      j["device_id"] = v.device_id;
      if (v.poi_id == kUnknownPoi) {
        j["poi_id"] = nullptr;
      } else {
        j["poi_id"] = v.poi_id;
      }
      j["arrive"] = v.arrive;
      j["depart"] = v.depart;
      j["lat"] = v.lat;
      j["lon"] = v.lon;
      out << j.dump() << "\n";
    }
  }
  check(out.good(), "write failed: " + path);
}

std::vector<std::vector<Visit>> load_visits_jsonl(const std::string& path) {
  std::ifstream in = open_in(path);
  std::vector<std::vector<Visit>> sequences;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Visit v;
      v.device_id = j.at("device_id").get<std::int64_t>();
      v.poi_id = j.at("poi_id").is_null() ? kUnknownPoi : j.at("poi_id").get<std::int64_t>();
      v.arrive = j.at("arrive").get<std::int64_t>();
      v.depart = j.at("depart").get<std::int64_t>();
      v.lat = j.at("lat").get<double>();
      v.lon = j.at("lon").get<double>();
      if (sequences.empty() || sequences.back().back().device_id != v.device_id) {
        sequences.emplace_back();
      }
      sequences.back().push_back(v);
    } catch (const json::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return sequences;
}

void write_distributions_jsonl(const std::string& path, const std::vector<VisitDistribution>& dists) {
  std::ofstream out = open_out(path);
  for (const auto& d : dists) {
    json j;
    j["poi_id"] = d.poi_id;
    j["count"] = d.count;
    j["bins"] = d.bins;
    out << j.dump() << "\n";
  }
  check(out.good(), "write failed: " + path);
}

std::vector<VisitDistribution> load_distributions_jsonl(const std::string& path) {
  std::ifstream in = open_in(path);
  std::vector<VisitDistribution> dists;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      VisitDistribution d;
      d.poi_id = j.at("poi_id").get<std::int64_t>();
      d.count = j.at("count").get<std::int64_t>();
      d.bins = j.at("bins").get<std::vector<double>>();
      check(d.bins.size() == kWeekBins, "distribution must have 168 bins");
      dists.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return dists;
}

void write_partition_json(const std::string& path, const Partition& partition, std::int64_t min_visits, int top_k) {
  json j;
  j["anchors"] = partition.anchors;
  j["sparse"] = partition.sparse;
  j["min_visits"] = min_visits;
  j["top_k"] = top_k;
  std::ofstream out = open_out(path);
  out << j.dump(2) << "\n";
  check(out.good(), "write failed: " + path);
}

Partition load_partition_json(const std::string& path) {
  std::ifstream in = open_in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  Partition part;
  part.anchors = j.at("anchors").get<std::vector<std::int64_t>>();
  part.sparse = j.at("sparse").get<std::vector<std::int64_t>>();
  return part;
}

}  // namespace mepoi
