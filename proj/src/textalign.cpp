#include "mepoi/textalign.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mepoi/common.hpp"
#include "mepoi/geo.hpp"
#include "mepoi/parallel.hpp"

namespace mepoi {
namespace {

using json = nlohmann::json;

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

struct Neighbor {
  double distance_km = 0.0;
  const Poi* poi = nullptr;
};

// FNV-1a, 64 bit. Chosen over std::hash because the standard one may differ
// between standard libraries and the embeddings must be reproducible
// everywhere.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

}  // namespace

PoiPrompt build_prompt(const Poi& poi, const World& world) {
  std::vector<Neighbor> near;
  near.reserve(world.pois.size());
  for (const Poi& other : world.pois) {
    if (other.id == poi.id) continue;
    near.push_back({haversine_km(poi.location, other.location), &other});
  }
  const std::size_t want = std::min<std::size_t>(10, near.size());
  std::partial_sort(near.begin(), near.begin() + static_cast<std::ptrdiff_t>(want), near.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      if (a.distance_km != b.distance_km) return a.distance_km < b.distance_km;
                      return a.poi->id < b.poi->id;
                    });
  near.resize(want);

  char line[256];
  std::string text;
  std::snprintf(line, sizeof(line), "Coordinates: (%.5f, %.5f)\n", poi.location.lat, poi.location.lon);
  text += line;
  text += "Name: " + poi.name + "\n";
  text += "Category: " + poi.category + "\n";
  text += "Address: " + poi.address + "\n";
  text += "Nearby places:\n";
  for (const Neighbor& n : near) {
    const Poi& other = *n.poi;
    const double bearing = bearing_deg(poi.location.lat, poi.location.lon, other.location.lat, other.location.lon);
    std::snprintf(line, sizeof(line), "- %s, %.1f km %s\n", other.name.c_str(), n.distance_km, compass8(bearing));
    text += line;
  }
  return {poi.id, std::move(text)};
}

std::vector<PoiPrompt> build_all_prompts(const World& world) {
  std::vector<PoiPrompt> prompts(world.pois.size());
  parallel_for(static_cast<i64>(world.pois.size()), [&](i64 lo, i64 hi) {
    for (i64 i = lo; i < hi; ++i)
      prompts[static_cast<std::size_t>(i)] = build_prompt(world.pois[static_cast<std::size_t>(i)], world);
  });
  return prompts;
}

void write_prompt_files(const std::string& dir, const std::vector<PoiPrompt>& prompts) {
  std::filesystem::create_directories(dir);
  for (const PoiPrompt& p : prompts) {
    std::ofstream out = open_out(dir + "/poi_" + std::to_string(p.poi_id) + ".txt");
    out << p.text;
  }
}

std::vector<double> hash_embed_text(const std::string& text, i64 dim) {
  check(dim >= 1, "hash_embed_text: dim must be positive");
  std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
  const std::vector<std::string> tokens = tokenize(text);
  auto bump = [&](const std::string& gram) {
    const std::uint64_t h = fnv1a(gram);
    const std::size_t bucket = static_cast<std::size_t>(h % static_cast<std::uint64_t>(dim));
    out[bucket] += ((h >> 61) & 1) ? 1.0 : -1.0;
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    bump(tokens[i]);
    if (i + 1 < tokens.size()) bump(tokens[i] + " " + tokens[i + 1]);
  }
  double norm = 0.0;
  for (double v : out) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0)
    for (double& v : out) v /= norm;
  return out;
}

void write_text_embeddings_jsonl(const std::string& path, const std::vector<TextEmbeddingRecord>& records) {
  std::ofstream out = open_out(path);
  for (const TextEmbeddingRecord& r : records) {
    json j;
    j["poi_id"] = r.poi_id;
    j["vector"] = r.vector;
    out << j.dump() << "\n";
  }
  check(out.good(), "failed writing " + path);
}

std::vector<TextEmbeddingRecord> load_text_embeddings_jsonl(const std::string& path) {
  std::ifstream in = open_in(path);
  std::vector<TextEmbeddingRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      TextEmbeddingRecord r;
      r.poi_id = j.at("poi_id").get<i64>();
      r.vector = j.at("vector").get<std::vector<double>>();
      check(!r.vector.empty(), "empty vector");
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace mepoi
