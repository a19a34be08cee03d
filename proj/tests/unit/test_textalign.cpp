#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "mepoi/geo.hpp"
#include "mepoi/textalign.hpp"
#include "mepoi/world.hpp"
#include "test_util.hpp"

using namespace mepoi;
using namespace mepoi::testutil;

TEST_SUITE_BEGIN("textalign");

namespace {

int count_neighbor_lines(const std::string& text) {
  int n = 0;
  for (std::size_t pos = text.find("\n- "); pos != std::string::npos; pos = text.find("\n- ", pos + 1)) ++n;
  return n;
}

World tiny_world(std::vector<LatLon> spots) {
  World w;
  for (std::size_t i = 0; i < spots.size(); ++i) {
    Poi p;
    p.id = static_cast<i64>(i);
    p.location = spots[i];
    p.name = "Place " + std::to_string(i);
    p.category = "cafe";
    p.address = std::to_string(100 + i) + " Main St";
    w.pois.push_back(std::move(p));
  }
  return w;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("prompts carry every field and repeat byte for byte") {
  WorldConfig wc;
  wc.poi_count = 25;
  wc.device_count = 1;
  wc.duration_days = 1;
  wc.neighborhood_count = 4;
  wc.seed = 3;
  const World world = generate_world(wc);

  const Poi& poi = world.pois[5];
  const PoiPrompt a = build_prompt(poi, world);
  const PoiPrompt b = build_prompt(poi, world);
  CHECK(a.poi_id == poi.id);
  CHECK(a.text == b.text);

  char coords[64];
  std::snprintf(coords, sizeof(coords), "Coordinates: (%.5f, %.5f)", poi.location.lat, poi.location.lon);
  CHECK(a.text.find(coords) != std::string::npos);
  CHECK(a.text.find("Name: " + poi.name) != std::string::npos);
  CHECK(a.text.find("Category: " + poi.category) != std::string::npos);
  CHECK(a.text.find("Address: " + poi.address) != std::string::npos);
  CHECK(a.text.find("Nearby places:") != std::string::npos);
  CHECK(count_neighbor_lines(a.text) == 10);

  // The batch builder is a pure map over the same function.
  const std::vector<PoiPrompt> all = build_all_prompts(world);
  REQUIRE(all.size() == world.pois.size());
  for (const Poi& p : world.pois) {
    const PoiPrompt one = build_prompt(p, world);
    CHECK(all[static_cast<std::size_t>(p.id)].poi_id == one.poi_id);
    CHECK(all[static_cast<std::size_t>(p.id)].text == one.text);
  }
}

TEST_CASE("small worlds trim the neighbor section") {
  WorldConfig wc;
  wc.poi_count = 1;
  wc.device_count = 1;
  wc.duration_days = 1;
  wc.neighborhood_count = 1;
  wc.seed = 5;
  const World lone = generate_world(wc);
  const PoiPrompt p = build_prompt(lone.pois[0], lone);
  CHECK(p.text.find("Nearby places:") != std::string::npos);
  CHECK(count_neighbor_lines(p.text) == 0);

  wc.poi_count = 6;
  const World few = generate_world(wc);
  CHECK(count_neighbor_lines(build_prompt(few.pois[2], few).text) == 5);
}

TEST_CASE("neighbor lines match a brute-force nearest scan") {
  WorldConfig wc;
  wc.poi_count = 60;
  wc.device_count = 1;
  wc.duration_days = 1;
  wc.neighborhood_count = 6;
  wc.seed = 11;
  const World world = generate_world(wc);

  for (i64 id : {0, 17, 34, 59}) {
    const Poi& poi = world.pois[static_cast<std::size_t>(id)];
    struct Entry {
      double km;
      i64 id;
    };
    std::vector<Entry> order;
    for (const Poi& other : world.pois) {
      if (other.id == poi.id) continue;
      order.push_back({haversine_km(poi.location, other.location), other.id});
    }
    std::sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) {
      if (a.km != b.km) return a.km < b.km;
      return a.id < b.id;
    });

    const std::string text = build_prompt(poi, world).text;
    std::size_t cursor = text.find("Nearby places:");
    REQUIRE(cursor != std::string::npos);
    for (std::size_t i = 0; i < 10; ++i) {
      const Poi& other = world.pois[static_cast<std::size_t>(order[i].id)];
      const double bearing =
          bearing_deg(poi.location.lat, poi.location.lon, other.location.lat, other.location.lon);
      char line[256];
      std::snprintf(line, sizeof(line), "- %s, %.1f km %s\n", other.name.c_str(), order[i].km,
                    compass8(bearing));
      const std::size_t at = text.find(line, cursor);
      REQUIRE_MESSAGE(at != std::string::npos, "missing neighbor line: " << line);
      cursor = at;  // subsequent neighbors must appear further down
    }
  }
}

TEST_CASE("compass directions land in the right sectors") {
  const LatLon home{29.7, -95.4};
  const World w = tiny_world({home, offset_meters(home, 1500.0, 0.0), offset_meters(home, 1000.0, 1000.0),
                              offset_meters(home, -400.0, -400.0)});
  const std::string text = build_prompt(w.pois[0], w).text;
  CHECK(text.find("- Place 1, 1.5 km N\n") != std::string::npos);
  CHECK(text.find("- Place 2, 1.4 km NE\n") != std::string::npos);
  CHECK(text.find("- Place 3, 0.6 km SW\n") != std::string::npos);

  // Looking back from the northern neighbor, home sits due south.
  CHECK(build_prompt(w.pois[1], w).text.find("- Place 0, 1.5 km S\n") != std::string::npos);
}

TEST_CASE("prompt files land one per POI") {
  const World w = tiny_world({{29.7, -95.4}, {29.71, -95.41}});
  const auto prompts = build_all_prompts(w);
  const std::string dir = (std::filesystem::temp_directory_path() / "mepoi_prompts_test").string();
  std::filesystem::remove_all(dir);
  write_prompt_files(dir, prompts);
  for (const PoiPrompt& p : prompts) {
    std::ifstream in(dir + "/poi_" + std::to_string(p.poi_id) + ".txt");
    REQUIRE(in.good());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(content == p.text);
  }
}

TEST_CASE("hash embeddings are unit length, deterministic, and text-sensitive") {
  const HashTextProvider<double> provider;
  CHECK(provider.dim() == 768);

  const PoiPrompt p{0, "Coordinates: (29.70000, -95.40000)\nName: Taco Stand\nCategory: restaurant\n"};
  const auto v1 = provider.embed(p);
  const auto v2 = provider.embed(p);
  REQUIRE(v1.size() == 768);
  CHECK(v1 == v2);

  double norm = 0.0;
  for (double x : v1) norm += x * x;
  CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-12);

  const auto other = provider.embed({1, "Name: Symphony Hall\nCategory: concert venue\n"});
  CHECK(cosine(v1, other) < 0.99);

  // Hashing is case and punctuation insensitive by construction.
  const auto shouty = provider.embed({2, "NAME: TACO, STAND!! coordinates 29.70000 95.40000 restaurant category"});
  CHECK(provider.embed({3, "name taco stand"}) == provider.embed({4, "Name: Taco Stand"}));
  (void)shouty;

  const HashTextProvider<double> narrow(32);
  CHECK(narrow.embed(p).size() == 32);
  CHECK_THROWS(HashTextProvider<double>(0));

  // Degenerate text has nothing to hash.
  const auto empty = provider.embed({5, "..."});
  CHECK(*std::max_element(empty.begin(), empty.end()) == 0.0);
}

TEST_CASE("renaming one neighbor moves the embedding a little, not a lot") {
  WorldConfig wc;
  wc.poi_count = 40;
  wc.device_count = 1;
  wc.duration_days = 1;
  wc.neighborhood_count = 4;
  wc.seed = 23;
  const World world = generate_world(wc);
  const PoiPrompt base = build_prompt(world.pois[7], world);

  // Swap the final neighbor's name for an unrelated one.
  const std::size_t tail = base.text.rfind("\n- ");
  REQUIRE(tail != std::string::npos);
  const std::size_t comma = base.text.find(',', tail);
  REQUIRE(comma != std::string::npos);
  std::string changed = base.text.substr(0, tail + 3) + "Zanzibar Spice Market" + base.text.substr(comma);
  REQUIRE(changed != base.text);

  const HashTextProvider<double> provider;
  const double cos = cosine(provider.embed(base), provider.embed({base.poi_id, changed}));
  CHECK(cos < 1.0);
  CHECK(cos > 0.5);
}

TEST_CASE("file provider round-trips and names every failure") {
  const std::string path = (std::filesystem::temp_directory_path() / "mepoi_text_embeddings.jsonl").string();
  std::vector<TextEmbeddingRecord> records(3);
  Rng rng(31);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].poi_id = static_cast<i64>(2 * i + 1);
    for (int c = 0; c < 5; ++c) records[i].vector.push_back(rng.normal());
  }
  write_text_embeddings_jsonl(path, records);

  const FileTextProvider<double> provider(path);
  CHECK(provider.dim() == 5);
  CHECK(provider.embed({3, "ignored text"}) == records[1].vector);
  CHECK_THROWS_WITH_AS(provider.embed({99, ""}), doctest::Contains("99"), std::invalid_argument);

  SUBCASE("malformed line is reported with its number") {
    std::ofstream(path, std::ios::app) << "{not json\n";
    CHECK_THROWS_WITH_AS(FileTextProvider<double>{path}, doctest::Contains(":4"), std::invalid_argument);
  }
  SUBCASE("dimension mismatch is reported per POI") {
    std::ofstream(path, std::ios::app) << "{\"poi_id\": 9, \"vector\": [1.0, 2.0]}\n";
    CHECK_THROWS_WITH_AS(FileTextProvider<double>{path}, doctest::Contains("POI 9"), std::invalid_argument);
  }
  SUBCASE("duplicate ids are rejected") {
    std::ofstream(path, std::ios::app) << "{\"poi_id\": 1, \"vector\": [1.0, 2.0, 3.0, 4.0, 5.0]}\n";
    CHECK_THROWS_WITH_AS(FileTextProvider<double>{path}, doctest::Contains("duplicate"), std::invalid_argument);
  }
  SUBCASE("an empty file is rejected") {
    std::ofstream(path, std::ios::trunc).close();
    CHECK_THROWS_WITH_AS(FileTextProvider<double>{path}, doctest::Contains("no text embeddings"),
                         std::invalid_argument);
  }
}

TEST_CASE("alignment loss hits its closed forms") {
  Rng rng(41);
  ParamStore<double> store;
  TextProjection<double> proj(store, 3, 3, rng);
  for (i64 r = 0; r < 3; ++r)
    for (i64 c = 0; c < 3; ++c) proj.param().value.at(r, c) = r == c ? 1.0 : 0.0;

  auto one_pair = [&](std::vector<double> z_row, std::vector<double> t_row) {
    Tape<double> tape;
    Tensor<double> z = Tensor<double>::from({1, 3}, std::move(z_row));
    Tensor<double> t = Tensor<double>::from({1, 3}, std::move(t_row));
    return tape.val(text_align_loss(tape, tape.constant(z), t, proj)).at(0);
  };

  CHECK(std::abs(one_pair({2.0, 0.0, 0.0}, {5.0, 0.0, 0.0}) - 0.0) < 1e-12);  // parallel, any scale
  CHECK(std::abs(one_pair({1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}) - 1.0) < 1e-12);  // orthogonal
  CHECK(std::abs(one_pair({1.0, 0.0, 0.0}, {-3.0, 0.0, 0.0}) - 2.0) < 1e-12);  // opposed

  // Mean over rows of the three scenarios above.
  Tape<double> tape;
  Tensor<double> z = Tensor<double>::from({3, 3}, {2, 0, 0, 1, 0, 0, 1, 0, 0});
  Tensor<double> t = Tensor<double>::from({3, 3}, {5, 0, 0, 0, 1, 0, -3, 0, 0});
  CHECK(std::abs(tape.val(text_align_loss(tape, tape.constant(z), t, proj)).at(0) - 1.0) < 1e-12);
}

TEST_CASE("alignment loss agrees with the direct formula and stays in range") {
  Rng rng(43);
  ParamStore<double> store;
  TextProjection<double> proj(store, 5, 9, rng);
  const Tensor<double> zt = rand_tensor({7, 5}, rng);
  const Tensor<double> text = rand_tensor({7, 9}, rng);

  Tape<double> tape;
  const double loss = tape.val(text_align_loss(tape, tape.constant(zt), text, proj)).at(0);
  CHECK(loss >= 0.0);
  CHECK(loss <= 2.0);

  double expect = 0.0;
  for (i64 r = 0; r < 7; ++r) {
    std::vector<double> zr(5), pr(5, 0.0);
    for (i64 c = 0; c < 5; ++c) zr[static_cast<std::size_t>(c)] = zt.at(r, c);
    for (i64 c = 0; c < 5; ++c)
      for (i64 u = 0; u < 9; ++u) pr[static_cast<std::size_t>(c)] += proj.param().value.at(c, u) * text.at(r, u);
    expect += 1.0 - cosine(zr, pr);
  }
  expect /= 7.0;
  CHECK(std::abs(loss - expect) < 1e-12);
}

TEST_CASE("gradients flow to the prototypes and the projection") {
  Rng rng(47);
  ParamStore<double> store;
  PrototypeBank<double> bank(store, {0, 1, 2, 3}, 6, rng);
  TextProjection<double> proj(store, 6, 11, rng);
  const Tensor<double> text = rand_tensor({3, 11}, rng);
  const std::vector<i64> ids = {2, 0, 3};

  auto build = [&](Tape<double>& tape) { return text_align_loss(tape, bank, ids, text, proj); };
  CHECK(grad_check(store, build) < 1e-6);

  Tape<double> tape;
  store.zero_grad();
  tape.backward(build(tape));
  double proto_mag = 0.0, proj_mag = 0.0, untouched = 0.0;
  for (i64 c = 0; c < 6; ++c) {
    proto_mag += std::abs(bank.param().grad.at(bank.row(0), c));
    untouched += std::abs(bank.param().grad.at(bank.row(1), c));
  }
  for (i64 j = 0; j < proj.param().grad.size(); ++j) proj_mag += std::abs(proj.param().grad.data()[j]);
  CHECK(proto_mag > 0.0);
  CHECK(proj_mag > 0.0);
  CHECK(untouched == 0.0);
}

TEST_CASE("a four-POI toy aligns over two hundred steps") {
  std::vector<double> first_losses, last_losses;
  int improved = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    ParamStore<double> store;
    PrototypeBank<double> bank(store, {0, 1, 2, 3}, 8, rng);
    TextProjection<double> proj(store, 8, 16, rng);
    Tensor<double> text = rand_tensor({4, 16}, rng);
    const std::vector<i64> ids = {0, 1, 2, 3};
    Adam<double> opt(store, AdamConfig{.lr = 1e-2});

    double first = 0.0, last = 0.0;
    for (int step = 0; step < 200; ++step) {
      Tape<double> tape;
      Value<double> loss = text_align_loss(tape, bank, ids, text, proj);
      last = tape.val(loss).at(0);
      if (step == 0) first = last;
      store.zero_grad();
      tape.backward(loss);
      opt.step();
    }
    first_losses.push_back(first);
    last_losses.push_back(last);
    if (last < first) ++improved;
  }
  std::sort(first_losses.begin(), first_losses.end());
  std::sort(last_losses.begin(), last_losses.end());
  CHECK(improved >= 3);
  CHECK(last_losses[2] < first_losses[2]);  // medians
}

TEST_SUITE_END();
