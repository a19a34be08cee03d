#include "mepoi/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "mepoi/common.hpp"
#include "mepoi/rng.hpp"

namespace mepoi {
namespace {

using json = nlohmann::json;

constexpr std::uint8_t kAllDays = 0x7f;   // Monday = bit 0
constexpr std::uint8_t kWeekdays = 0x1f;  // Mon..Fri

struct Archetype {
  const char* category;
  std::uint8_t days;
  int open_hour;  // may exceed 24; the excess wraps into the next day
  int open_len;
  std::vector<int> peaks;  // hours on the same wrapped axis as open_hour
  double weekend_boost;
  int base_price;
};

// Opening windows are chosen so that, across categories, every part of the
// week carries signal: mornings (cafe, school), office hours, evenings
// (restaurant, gym), nights (bar, diner), weekend nights (nightclub), and
// weekend daytime boosts (park, museum).
const std::vector<Archetype>& archetypes() {
  static const std::vector<Archetype> kTable = {
      {"cafe", kAllDays, 6, 10, {8, 11}, 1.0, 1},
      {"restaurant", kAllDays, 11, 11, {12, 19}, 1.1, 1},
      {"bar", kAllDays, 18, 8, {22}, 1.3, 2},
      {"nightclub", static_cast<std::uint8_t>(0x30), 21, 8, {24}, 1.0, 2},  // Fri, Sat
      {"office", kWeekdays, 8, 10, {9, 14}, 1.0, 0},
      {"gym", kAllDays, 5, 18, {7, 18}, 0.9, 1},
      {"supermarket", kAllDays, 8, 13, {17}, 1.2, 0},
      {"school", kWeekdays, 7, 9, {8, 15}, 1.0, 0},
      {"park", kAllDays, 6, 14, {10, 16}, 1.5, 0},
      {"museum", static_cast<std::uint8_t>(0x7e), 10, 7, {13}, 1.5, 1},  // Tue..Sun
      {"pharmacy", kAllDays, 8, 12, {12}, 1.0, 0},
      {"diner", kAllDays, 16, 12, {20, 26}, 1.2, 1},
  };
  return kTable;
}

// 168-bin weekly arrival profile for one instance of an archetype. Opening
// time, length, and peak positions are jittered per instance; each service
// day gets its own intensity noise so no two days look identical.
std::vector<double> build_profile(const Archetype& a, Rng& rng, double jitter_hours) {
  const int start = a.open_hour + static_cast<int>(std::lround(rng.uniform(-jitter_hours, jitter_hours)));
  const int len = std::clamp(a.open_len + static_cast<int>(rng.uniform_int(-1, 1)), 3, 23);
  std::vector<double> peak_pos;
  for (int p : a.peaks) peak_pos.push_back(p + rng.uniform(-jitter_hours / 2.0, jitter_hours / 2.0));

  std::vector<double> w(kWeekBins, 0.0);
  for (int d = 0; d < 7; ++d) {
    if (!(a.days & (1u << d))) continue;
    double day_scale = rng.lognormal(0.0, 0.2);
    if (d >= 5) day_scale *= a.weekend_boost;
    for (int k = 0; k < len; ++k) {
      const int abs_h = start + k;
      const int bin = ((d + abs_h / 24) % 7) * 24 + abs_h % 24;
      double v = 1.0;
      for (double p : peak_pos) {
        const double z = (abs_h - p) / 1.8;
        v += 2.5 * std::exp(-0.5 * z * z);
      }
      w[bin] += v * day_scale;
    }
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  check(total > 0.0, "build_profile: empty profile");
  for (double& x : w) x /= total;
  return w;
}

const std::vector<std::string>& adjective_pool() {
  static const std::vector<std::string> kPool = {
      "Blue", "Golden", "Silver", "Red", "Green", "Lucky", "Royal", "Sunny",
      "Happy", "Grand", "Little", "Gentle", "Rustic", "Copper", "Velvet", "Amber"};
  return kPool;
}

const std::vector<std::string>& noun_pool(const std::string& category) {
  static const std::unordered_map<std::string, std::vector<std::string>> kPools = {
      {"cafe", {"Bean Cafe", "Cup Coffeehouse", "Roastery", "Espresso Bar"}},
      {"restaurant", {"Table", "Kitchen", "Bistro", "Grill"}},
      {"bar", {"Tavern", "Taproom", "Lounge", "Barrel"}},
      {"nightclub", {"Club", "Disco", "Ballroom", "Basement"}},
      {"office", {"Offices", "Works", "Partners", "Group"}},
      {"gym", {"Fitness", "Gym", "Athletics", "Strength Co"}},
      {"supermarket", {"Market", "Grocers", "Foods", "Pantry"}},
      {"school", {"Academy", "School", "Learning Center", "Prep"}},
      {"park", {"Park", "Green", "Commons", "Gardens"}},
      {"museum", {"Museum", "Gallery", "Collection", "Hall"}},
      {"pharmacy", {"Pharmacy", "Drugstore", "Apothecary", "Chemists"}},
      {"diner", {"Diner", "Night Grill", "All-Hours Kitchen", "Waffle Stop"}},
  };
  return kPools.at(category);
}

const std::vector<std::string>& street_pool() {
  static const std::vector<std::string> kPool = {
      "Oak", "Pine", "Cedar", "Elm", "Maple", "Walnut", "Juniper", "Magnolia", "Pecan", "Willow",
      "Ash", "Sycamore", "Holly", "Laurel", "Birch", "Cypress", "Mesquite", "Palm", "Hickory", "Chestnut"};
  return kPool;
}

const std::vector<std::string>& street_suffix_pool() {
  static const std::vector<std::string> kPool = {"St", "Ave", "Blvd", "Dr", "Ln", "Rd"};
  return kPool;
}

std::string neighborhood_name(int index) {
  static const std::vector<std::string> kPrefix = {"East", "West", "North", "South",
                                                   "Old", "New", "Upper", "Lower"};
  static const std::vector<std::string> kStem = {"brook", "haven", "field", "gate", "wood",
                                                 "crest", "ridge", "glen", "shore", "park"};
  const int n = static_cast<int>(kPrefix.size() * kStem.size());
  std::string name = kPrefix[(index % n) / kStem.size()] + kStem[(index % n) % kStem.size()];
  if (index >= n) name += " " + std::to_string(index / n + 1);
  return name;
}

std::string pick(const std::vector<std::string>& pool, Rng& rng) {
  return pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
}

// Coarse spatial hash used to enforce minimum spacing during placement.
struct SpacingGrid {
  double cell_deg;
  std::unordered_map<std::int64_t, std::vector<LatLon>> cells;

  explicit SpacingGrid(double cell_m) : cell_deg(cell_m / 111320.0) {}

  std::int64_t key(double lat, double lon) const {
    const auto qi = static_cast<std::int64_t>(std::floor(lat / cell_deg));
    const auto qj = static_cast<std::int64_t>(std::floor(lon / cell_deg));
    return qi * 0x100000 + qj;
  }

  bool too_close(const LatLon& p, double min_km) const {
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        const auto it = cells.find(key(p.lat + di * cell_deg, p.lon + dj * cell_deg));
        if (it == cells.end()) continue;
        for (const LatLon& q : it->second) {
          if (haversine_km(p, q) < min_km) return true;
        }
      }
    }
    return false;
  }

  void insert(const LatLon& p) { cells[key(p.lat, p.lon)].push_back(p); }
};

std::vector<double> smooth_circular(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = 0.25 * x[(i + n - 1) % n] + 0.5 * x[i] + 0.25 * x[(i + 1) % n];
  }
  return out;
}

std::string open_hours_string(const std::array<std::uint8_t, kWeekBins>& mask) {
  std::string s(kWeekBins, '0');
  for (int i = 0; i < kWeekBins; ++i) {
    if (mask[i]) s[i] = '1';
  }
  return s;
}

std::array<std::uint8_t, kWeekBins> parse_open_hours(const std::string& s) {
  check(s.size() == kWeekBins, "open_hours string must have 168 characters");
  std::array<std::uint8_t, kWeekBins> mask{};
  for (int i = 0; i < kWeekBins; ++i) {
    check(s[i] == '0' || s[i] == '1', "open_hours string must be 0/1");
    mask[i] = s[i] == '1' ? 1 : 0;
  }
  return mask;
}

json poi_to_json(const Poi& p) {
  json j;
  j["id"] = p.id;
  j["lat"] = p.location.lat;
  j["lon"] = p.location.lon;
  json ring = json::array();
  for (const LatLon& v : p.polygon) ring.push_back(json::array({v.lat, v.lon}));
  j["polygon"] = ring;
  j["category"] = p.category;
  j["name"] = p.name;
  j["address"] = p.address;
  j["neighborhood"] = p.neighborhood;
  json t;
  t["open_hours"] = open_hours_string(p.truth.open_hours);
  t["price_level"] = p.truth.price_level;
  t["visit_intent"] = p.truth.visit_intent;
  t["busyness"] = p.truth.busyness;
  t["closed"] = p.truth.closed;
  t["closure_ts"] = p.truth.closure_ts;
  t["usage_profile"] = p.truth.usage_profile;
  t["popularity"] = p.truth.popularity;
  j["truth"] = t;
  return j;
}

Poi poi_from_json(const json& j) {
  Poi p;
  p.id = j.at("id").get<std::int64_t>();
  p.location = {j.at("lat").get<double>(), j.at("lon").get<double>()};
  for (const auto& v : j.at("polygon")) {
    p.polygon.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
  }
  p.category = j.at("category").get<std::string>();
  p.name = j.at("name").get<std::string>();
  p.address = j.at("address").get<std::string>();
  p.neighborhood = j.at("neighborhood").get<int>();
  const json& t = j.at("truth");
  p.truth.open_hours = parse_open_hours(t.at("open_hours").get<std::string>());
  p.truth.price_level = t.at("price_level").get<int>();
  p.truth.visit_intent = t.at("visit_intent").get<int>();
  p.truth.busyness = t.at("busyness").get<std::vector<double>>();
  p.truth.closed = t.at("closed").get<bool>();
  p.truth.closure_ts = t.at("closure_ts").get<std::int64_t>();
  p.truth.usage_profile = t.at("usage_profile").get<std::vector<double>>();
  p.truth.popularity = t.at("popularity").get<double>();
  check(p.truth.busyness.size() == kWeekBins, "busyness must have 168 bins");
  check(p.truth.usage_profile.size() == kWeekBins, "usage_profile must have 168 bins");
  return p;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary: no newline translation anywhere
  check(out.good(), "cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open for reading: " + path);
  return in;
}

}  // namespace

World generate_world(const WorldConfig& cfg) {
  check(cfg.poi_count > 0, "poi_count must be positive");
  check(cfg.neighborhood_count > 0, "neighborhood_count must be positive");
  check(cfg.duration_days > 0, "duration_days must be positive");
  check(cfg.neighborhood_correlation >= 0.0 && cfg.neighborhood_correlation <= 1.0,
        "neighborhood_correlation must be in [0, 1]");
  check(cfg.bbox.max_lat > cfg.bbox.min_lat && cfg.bbox.max_lon > cfg.bbox.min_lon,
        "bbox must have positive extent");

  World world;
  world.config = cfg;
  Rng root(cfg.seed);

  // Neighborhood centers, kept away from the bbox edge and from each other so
  // clusters stay distinguishable.
  Rng nrng = root.child("neighborhoods");
  const double margin_lat = (cfg.bbox.max_lat - cfg.bbox.min_lat) * 0.05;
  const double margin_lon = (cfg.bbox.max_lon - cfg.bbox.min_lon) * 0.05;
  for (int n = 0; n < cfg.neighborhood_count; ++n) {
    LatLon c;
    for (int attempt = 0;; ++attempt) {
      c.lat = nrng.uniform(cfg.bbox.min_lat + margin_lat, cfg.bbox.max_lat - margin_lat);
      c.lon = nrng.uniform(cfg.bbox.min_lon + margin_lon, cfg.bbox.max_lon - margin_lon);
      bool ok = true;
      for (const LatLon& prev : world.neighborhood_centers) {
        if (haversine_km(c, prev) < cfg.neighborhood_sigma_km * 2.0) ok = false;
      }
      if (ok || attempt > 200) break;
    }
    world.neighborhood_centers.push_back(c);
    world.neighborhood_names.push_back(neighborhood_name(n));
  }

  // Each neighborhood gets a shared rhythm drawn from a random archetype.
  // POIs mix this with their own archetype's profile.
  const auto& types = archetypes();
  std::vector<std::vector<double>> hood_profile;
  for (int n = 0; n < cfg.neighborhood_count; ++n) {
    Rng hrng = root.child("hood_profile", static_cast<std::uint64_t>(n));
    const auto& a = types[static_cast<std::size_t>(hrng.uniform_int(0, static_cast<std::int64_t>(types.size()) - 1))];
    hood_profile.push_back(build_profile(a, hrng, cfg.profile_jitter_hours));
  }

  // Popularity: power law over a random rank permutation.
  std::vector<std::int64_t> rank(static_cast<std::size_t>(cfg.poi_count));
  std::iota(rank.begin(), rank.end(), 0);
  Rng prng = root.child("popularity");
  prng.shuffle(rank);
  double pop_total = 0.0;
  std::vector<double> pop(rank.size());
  for (std::size_t i = 0; i < rank.size(); ++i) {
    pop[i] = std::pow(static_cast<double>(rank[i]) + 1.0, -cfg.popularity_exponent);
    pop_total += pop[i];
  }
  for (double& x : pop) x /= pop_total;

  // Closed subset, drawn independently of popularity.
  std::vector<std::int64_t> ids(rank.size());
  std::iota(ids.begin(), ids.end(), 0);
  Rng crng = root.child("closed");
  crng.shuffle(ids);
  std::vector<std::uint8_t> is_closed(rank.size(), 0);
  const auto closed_count = static_cast<std::size_t>(std::llround(cfg.closed_fraction * static_cast<double>(cfg.poi_count)));
  for (std::size_t i = 0; i < closed_count && i < ids.size(); ++i) is_closed[static_cast<std::size_t>(ids[i])] = 1;
  const std::int64_t closure_ts =
      cfg.start_timestamp + static_cast<std::int64_t>(cfg.closure_date_frac * cfg.duration_days * 86400.0);

  SpacingGrid grid(std::max(cfg.min_poi_spacing_m, 1.0));
  const double min_km = cfg.min_poi_spacing_m / 1000.0;

  world.pois.reserve(rank.size());
  for (std::int64_t id = 0; id < cfg.poi_count; ++id) {
    Rng rng = root.child("poi", static_cast<std::uint64_t>(id));
    Poi p;
    p.id = id;
    p.neighborhood = static_cast<int>(rng.uniform_int(0, cfg.neighborhood_count - 1));
    const LatLon center = world.neighborhood_centers[static_cast<std::size_t>(p.neighborhood)];

    double sigma_m = cfg.neighborhood_sigma_km * 1000.0;
    for (int attempt = 0;; ++attempt) {
      p.location = offset_meters(center, rng.normal(0.0, sigma_m), rng.normal(0.0, sigma_m));
      if (world.config.bbox.contains(p.location.lat, p.location.lon) && !grid.too_close(p.location, min_km)) break;
      check(attempt < 2000, "could not place POI " + std::to_string(id) + " with required spacing");
      if (attempt % 200 == 199) sigma_m *= 1.5;  // relax clustering before giving up
    }
    grid.insert(p.location);

    const auto& a = types[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(types.size()) - 1))];
    p.category = a.category;
    p.name = pick(adjective_pool(), rng) + " " + pick(noun_pool(p.category), rng);
    p.address = std::to_string(rng.uniform_int(100, 9899)) + " " + pick(street_pool(), rng) + " " +
                pick(street_suffix_pool(), rng) + ", " + world.neighborhood_names[static_cast<std::size_t>(p.neighborhood)];

    if (rng.uniform() < cfg.polygon_fraction) {
      const int verts = static_cast<int>(rng.uniform_int(5, 7));
      const double base_r = rng.uniform(20.0, 45.0);
      const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      for (int v = 0; v < verts; ++v) {
        const double ang = phase + 2.0 * 3.14159265358979323846 * v / verts;
        const double r = base_r * rng.uniform(0.7, 1.15);
        p.polygon.push_back(offset_meters(p.location, r * std::cos(ang), r * std::sin(ang)));
      }
    }

    // Usage profile: idiosyncratic rhythm blended with the neighborhood's.
    const std::vector<double> own = build_profile(a, rng, cfg.profile_jitter_hours);
    const std::vector<double>& hood = hood_profile[static_cast<std::size_t>(p.neighborhood)];
    const double rho = cfg.neighborhood_correlation;
    std::vector<double> usage(kWeekBins);
    double usage_total = 0.0;
    for (int t = 0; t < kWeekBins; ++t) {
      usage[t] = rho * hood[t] + (1.0 - rho) * own[t];
      usage_total += usage[t];
    }
    for (double& x : usage) x /= usage_total;
    p.truth.usage_profile = usage;

    // Open hours are the bins carrying non-trivial mass; trace amounts leaked
    // in by mixing do not count as open.
    const double open_threshold = 0.25 / kWeekBins;
    for (int t = 0; t < kWeekBins; ++t) p.truth.open_hours[static_cast<std::size_t>(t)] = usage[t] > open_threshold ? 1 : 0;

    p.truth.popularity = pop[static_cast<std::size_t>(id)];
    p.truth.closed = is_closed[static_cast<std::size_t>(id)] != 0;
    p.truth.closure_ts = p.truth.closed ? closure_ts : 0;

    p.truth.price_level = a.base_price;
    if (rng.uniform() < 0.10) {
      p.truth.price_level += rng.bernoulli(0.5) ? 1 : -1;
      p.truth.price_level = std::clamp(p.truth.price_level, 0, 3);
    }

    // Busyness: smoothed usage, zeroed outside open hours, peaking at 1 and
    // floored by how popular the place is overall.
    std::vector<double> busy = smooth_circular(usage);
    double busy_max = 0.0;
    for (int t = 0; t < kWeekBins; ++t) {
      if (!p.truth.open_hours[static_cast<std::size_t>(t)]) busy[static_cast<std::size_t>(t)] = 0.0;
      busy_max = std::max(busy_max, busy[static_cast<std::size_t>(t)]);
    }
    const double pop_pct = 1.0 - static_cast<double>(rank[static_cast<std::size_t>(id)]) / static_cast<double>(std::max<std::int64_t>(cfg.poi_count - 1, 1));
    const double level = 0.35 + 0.65 * pop_pct;
    for (double& x : busy) x = busy_max > 0.0 ? std::clamp(x / busy_max * level, 0.0, 1.0) : 0.0;
    p.truth.busyness = busy;

    world.pois.push_back(std::move(p));
  }

  // Visit intent follows popularity quantiles: a handful of destination
  // places, a wide commodity base.
  for (auto& p : world.pois) {
    const double r = static_cast<double>(rank[static_cast<std::size_t>(p.id)]) / static_cast<double>(cfg.poi_count);
    if (r < 0.11) {
      p.truth.visit_intent = 3;
    } else if (r < 0.36) {
      p.truth.visit_intent = 2;
    } else if (r < 0.42) {
      p.truth.visit_intent = 1;
    } else {
      p.truth.visit_intent = 0;
    }
  }

  return world;
}

std::vector<GpsPoint> simulate_traces(const World& world, std::vector<StayEvent>* stays_out) {
  const WorldConfig& cfg = world.config;
  check(cfg.device_count > 0, "device_count must be positive");
  const std::int64_t t_end = cfg.start_timestamp + static_cast<std::int64_t>(cfg.duration_days) * 86400;
  const int weeks = (cfg.duration_days + 6) / 7;

  // Sampling weights: closed POIs that never open during the period drop out
  // entirely; ones that close mid-period are filtered per visit below.
  std::vector<double> weights(world.pois.size());
  for (std::size_t i = 0; i < world.pois.size(); ++i) {
    const auto& t = world.pois[i].truth;
    const bool never_open = t.closed && t.closure_ts <= cfg.start_timestamp;
    weights[i] = never_open ? 0.0 : t.popularity;
  }

  Rng root(cfg.seed);
  std::vector<GpsPoint> points;
  if (stays_out) stays_out->clear();

  struct PlannedStay {
    std::int64_t poi;
    std::int64_t arrive;
    std::int64_t depart;
  };

  const double dwell_mu = std::log(cfg.dwell_median_min * 60.0);

  for (std::int64_t d = 0; d < cfg.device_count; ++d) {
    Rng rng = root.child("device", static_cast<std::uint64_t>(d));

    // Visit count per device; a normal approximation of a Poisson is fine at
    // these rates and keeps the stream consumption fixed.
    const double lambda = cfg.visits_per_device_day * cfg.duration_days;
    const std::int64_t target = std::max<std::int64_t>(0, std::llround(lambda + rng.normal() * std::sqrt(lambda)));

    // A home spot away from every POI; fixes emitted there between outings
    // end up as visits the pipeline cannot attribute, which is exactly what
    // real traces look like.
    LatLon home;
    for (int attempt = 0; attempt < 50; ++attempt) {
      home = {rng.uniform(cfg.bbox.min_lat, cfg.bbox.max_lat), rng.uniform(cfg.bbox.min_lon, cfg.bbox.max_lon)};
      bool clear = true;
      for (const Poi& p : world.pois) {
        if (haversine_km(home, p.location) * 1000.0 < 150.0) {
          clear = false;
          break;
        }
      }
      if (clear) break;
    }

    // Draw (poi, weekly bin, week) triples; the weekly bin comes straight
    // from the POI's usage profile, so aggregate arrivals match it.
    std::vector<PlannedStay> plan;
    plan.reserve(static_cast<std::size_t>(target));
    for (std::int64_t k = 0; k < target; ++k) {
      const std::size_t pi = rng.categorical(weights);
      const auto& poi = world.pois[pi];
      const int bin = static_cast<int>(rng.categorical(poi.truth.usage_profile));
      const std::int64_t week = rng.uniform_int(0, weeks - 1);
      const std::int64_t arrive = cfg.start_timestamp + week * 604800 + static_cast<std::int64_t>(bin) * 3600 +
                                  static_cast<std::int64_t>(rng.uniform(0.0, 3600.0));
      const double dwell = std::clamp(rng.lognormal(dwell_mu, cfg.dwell_log_sigma), 310.0, 10800.0);
      const std::int64_t depart = arrive + static_cast<std::int64_t>(dwell);
      if (depart >= t_end) continue;
      if (poi.truth.closed && depart >= poi.truth.closure_ts) continue;
      plan.push_back({poi.id, arrive, depart});
    }
    std::sort(plan.begin(), plan.end(), [](const PlannedStay& a, const PlannedStay& b) {
      if (a.arrive != b.arrive) return a.arrive < b.arrive;
      if (a.poi != b.poi) return a.poi < b.poi;
      return a.depart < b.depart;
    });

    // Overlaps are resolved by cutting the earlier stay short rather than
    // dropping the later one: drops would thin the busiest hours and skew
    // arrival histograms away from the profiles. A stay is only dropped when
    // the previous one cannot keep its minimum dwell.
    std::vector<PlannedStay> kept;
    for (const PlannedStay& s : plan) {
      if (!kept.empty()) {
        PlannedStay& prev = kept.back();
        if (s.arrive - 30 < prev.arrive + 310) continue;
        prev.depart = std::min(prev.depart, s.arrive - 30);
      }
      kept.push_back(s);
    }

    auto emit = [&](std::int64_t ts, const LatLon& pos) {
      if (!points.empty() && points.back().device_id == d && ts <= points.back().ts) return;
      points.push_back({d, ts, pos.lat, pos.lon});
    };
    auto jittered = [&](const LatLon& base, double sigma_m, double max_m) {
      double dn = rng.normal(0.0, sigma_m);
      double de = rng.normal(0.0, sigma_m);
      const double r = std::sqrt(dn * dn + de * de);
      if (r > max_m) {
        dn *= max_m / r;
        de *= max_m / r;
      }
      return offset_meters(base, dn, de);
    };

    const LatLon* prev_loc = nullptr;
    std::int64_t prev_depart = 0;
    std::int64_t prev_poi = -1;
    for (const PlannedStay& s : kept) {
      const LatLon& loc = world.pois[static_cast<std::size_t>(s.poi)].location;

      if (prev_loc) {
        const std::int64_t gap = s.arrive - prev_depart;
        const bool same_poi = s.poi == prev_poi;
        // Back-to-back stays at one POI would otherwise fuse into a single
        // staypoint, silently swallowing the repeat arrival; a detour home
        // breaks them apart. Unrelated gaps get occasional home time too.
        const bool home_trip = same_poi || (gap > 2700 && rng.uniform() < 0.3);
        if (home_trip) {
          for (double frac : {0.35, 0.5, 0.65}) {
            emit(prev_depart + static_cast<std::int64_t>(frac * static_cast<double>(gap)), jittered(home, 12.0, 28.0));
          }
        } else if (!same_poi) {
          // A few fixes along the way, leaving just in time.
          const double dist_m = haversine_km(*prev_loc, loc) * 1000.0;
          const auto travel = static_cast<std::int64_t>(dist_m / cfg.transit_speed_mps);
          if (travel > 2 * static_cast<std::int64_t>(cfg.stay_point_interval_s) && gap > travel + 60) {
            const std::int64_t leave = s.arrive - travel;
            const auto n_fixes =
                std::min<std::int64_t>(6, travel / static_cast<std::int64_t>(cfg.stay_point_interval_s));
            for (std::int64_t f = 1; f <= n_fixes; ++f) {
              const double frac = static_cast<double>(f) / static_cast<double>(n_fixes + 1);
              const std::int64_t ts = leave + static_cast<std::int64_t>(frac * static_cast<double>(travel));
              LatLon mid{prev_loc->lat + frac * (loc.lat - prev_loc->lat),
                         prev_loc->lon + frac * (loc.lon - prev_loc->lon)};
              if (ts > prev_depart && ts < s.arrive) emit(ts, jittered(mid, 20.0, 45.0));
            }
          }
        }
      }

      emit(s.arrive, jittered(loc, cfg.stay_jitter_m, 28.0));
      std::int64_t ts = s.arrive;
      while (true) {
        ts += static_cast<std::int64_t>(cfg.stay_point_interval_s * rng.uniform(0.8, 1.2));
        if (ts >= s.depart - 1) break;
        emit(ts, jittered(loc, cfg.stay_jitter_m, 28.0));
      }
      emit(s.depart, jittered(loc, cfg.stay_jitter_m, 28.0));

      if (stays_out) stays_out->push_back({d, s.poi, s.arrive, s.depart});
      prev_loc = &loc;
      prev_depart = s.depart;
      prev_poi = s.poi;
    }
  }

  return points;
}

void write_world_jsonl(const std::string& path, const World& world) {
  std::ofstream out = open_out(path);
  for (const Poi& p : world.pois) out << poi_to_json(p).dump() << "\n";
  check(out.good(), "write failed: " + path);
}

World load_world_jsonl(const std::string& path) {
  std::ifstream in = open_in(path);
  World world;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      world.pois.push_back(poi_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  check(!world.pois.empty(), "no POIs in " + path);
  int max_hood = 0;
  for (const Poi& p : world.pois) max_hood = std::max(max_hood, p.neighborhood);
  for (int n = 0; n <= max_hood; ++n) world.neighborhood_names.push_back(neighborhood_name(n));
  world.config.poi_count = static_cast<std::int64_t>(world.pois.size());
  world.config.neighborhood_count = max_hood + 1;
  return world;
}

void write_labels_jsonl(const std::string& path, const World& world) {
  std::ofstream out = open_out(path);
  for (const Poi& p : world.pois) {
    json j;
    j["id"] = p.id;
    j["open_hours"] = open_hours_string(p.truth.open_hours);
    j["price_level"] = p.truth.price_level;
    j["visit_intent"] = p.truth.visit_intent;
    j["busyness"] = p.truth.busyness;
    j["closed"] = p.truth.closed;
    out << j.dump() << "\n";
  }
  check(out.good(), "write failed: " + path);
}

void write_traces_csv(const std::string& path, const std::vector<GpsPoint>& points) {
  std::ofstream out = open_out(path);
  out << "device_id,timestamp,lat,lon\n";
  char buf[96];
  for (const GpsPoint& p : points) {
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%.6f,%.6f\n", static_cast<long long>(p.device_id),
                  static_cast<long long>(p.ts), p.lat, p.lon);
    out << buf;
  }
  check(out.good(), "write failed: " + path);
}

std::vector<GpsPoint> load_traces_csv(const std::string& path) {
  std::ifstream in = open_in(path);
  std::string line;
  check(static_cast<bool>(std::getline(in, line)), "empty traces file: " + path);
  check(line == "device_id,timestamp,lat,lon", "unexpected traces header in " + path + ": " + line);
  std::vector<GpsPoint> points;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    GpsPoint p;
    long long dev = 0;
    long long ts = 0;
    if (std::sscanf(line.c_str(), "%lld,%lld,%lf,%lf", &dev, &ts, &p.lat, &p.lon) != 4) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": malformed row: " + line);
    }
    p.device_id = dev;
    p.ts = ts;
    points.push_back(p);
  }
  return points;
}

}  // namespace mepoi
