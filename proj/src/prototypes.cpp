#include "mepoi/prototypes.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "mepoi/common.hpp"

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

std::size_t value_width(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  throw std::invalid_argument("unknown embedding dtype '" + dtype + "'");
}

std::string directory_of(const std::string& path) {
  const std::size_t cut = path.find_last_of('/');
  return cut == std::string::npos ? std::string() : path.substr(0, cut + 1);
}

}  // namespace

std::vector<double> EmbeddingExport::as_doubles() const {
  const std::size_t width = value_width(dtype);
  check(raw.size() % width == 0, "embedding byte count is not a multiple of the value width");
  std::vector<double> out(raw.size() / width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (width == 4) {
      float v;
      std::memcpy(&v, raw.data() + i * 4, 4);
      out[i] = static_cast<double>(v);
    } else {
      std::memcpy(&out[i], raw.data() + i * 8, 8);
    }
  }
  return out;
}

void write_embedding_files(const std::string& manifest_path, const std::string& matrix_filename,
                           const EmbeddingExport& e) {
  check(matrix_filename.find('/') == std::string::npos, "matrix filename must be a bare name next to the manifest");
  const std::size_t width = value_width(e.dtype);
  check(e.raw.size() == e.poi_ids.size() * static_cast<std::size_t>(e.dim) * width,
        "embedding byte count does not match rows x dim");

  json j;
  j["poi_ids"] = e.poi_ids;
  j["dim"] = e.dim;
  j["dtype"] = e.dtype;
  j["matrix"] = matrix_filename;
  std::ofstream mout = open_out(manifest_path);
  mout << j.dump(2) << "\n";
  check(mout.good(), "write failed: " + manifest_path);

  const std::string matrix_path = directory_of(manifest_path) + matrix_filename;
  std::ofstream bout = open_out(matrix_path);
  bout.write(reinterpret_cast<const char*>(e.raw.data()), static_cast<std::streamsize>(e.raw.size()));
  check(bout.good(), "write failed: " + matrix_path);
}

EmbeddingExport load_embedding_files(const std::string& manifest_path) {
  std::ifstream min = open_in(manifest_path);
  json j;
  try {
    min >> j;
  } catch (const json::exception& ex) {
    throw std::invalid_argument(manifest_path + ": " + ex.what());
  }

  EmbeddingExport e;
  e.poi_ids = j.at("poi_ids").get<std::vector<std::int64_t>>();
  e.dim = j.at("dim").get<std::int64_t>();
  e.dtype = j.at("dtype").get<std::string>();
  check(e.dim >= 1, manifest_path + ": dim must be positive");
  const std::size_t width = value_width(e.dtype);

  const std::string matrix_path = directory_of(manifest_path) + j.at("matrix").get<std::string>();
  std::ifstream bin = open_in(matrix_path);
  bin.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(bin.tellg());
  bin.seekg(0, std::ios::beg);
  const std::size_t expected = e.poi_ids.size() * static_cast<std::size_t>(e.dim) * width;
  check(bytes == expected, matrix_path + ": expected " + std::to_string(expected) + " bytes, found " +
                               std::to_string(bytes));
  e.raw.resize(bytes);
  bin.read(reinterpret_cast<char*>(e.raw.data()), static_cast<std::streamsize>(bytes));
  check(bin.good(), "read failed: " + matrix_path);
  return e;
}

void write_embedding_csv(const std::string& path, const EmbeddingExport& e) {
  const std::vector<double> values = e.as_doubles();
  std::ofstream out = open_out(path);
  out << "poi_id";
  for (std::int64_t c = 0; c < e.dim; ++c) out << ",e" << c;
  out << "\n";
  // %.9g keeps f32 values exact through a text round-trip; f64 needs %.17g.
  const char* fmt = e.dtype == "f32" ? ",%.9g" : ",%.17g";
  char buf[40];
  for (std::size_t r = 0; r < e.poi_ids.size(); ++r) {
    out << e.poi_ids[r];
    for (std::int64_t c = 0; c < e.dim; ++c) {
      std::snprintf(buf, sizeof(buf), fmt, values[r * static_cast<std::size_t>(e.dim) + static_cast<std::size_t>(c)]);
      out << buf;
    }
    out << "\n";
  }
  check(out.good(), "write failed: " + path);
}

}  // namespace mepoi
