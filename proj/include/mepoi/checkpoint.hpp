#pragma once

#include <bit>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mepoi/optim.hpp"

namespace mepoi {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian raw floats; big-endian hosts are unsupported");

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>)
    return "f32";
  else
    return "f64";
}

template <typename T>
void write_raw(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "write_raw: cannot open " + path.string());
  f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  check(f.good(), "write_raw: short write to " + path.string());
}

template <typename T>
Tensor<T> read_raw(const std::filesystem::path& path, std::vector<i64> shape) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "read_raw: cannot open " + path.string());
  f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  check(f.gcount() == static_cast<std::streamsize>(t.size() * sizeof(T)),
        "read_raw: file " + path.string() + " shorter than declared shape");
  return t;
}

inline std::string tensor_file_name(std::size_t index, const std::string& name) {
  std::string safe;
  for (char c : name) safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_') ? c : '_';
  char buf[16];
  std::snprintf(buf, sizeof(buf), "p%04zu_", index);
  return buf + safe + ".bin";
}

// Checkpoint layout: <dir>/manifest.json plus one raw little-endian tensor
// file per parameter; optimizer moments ride along as .m/.v siblings so a
// resumed run continues the exact trajectory.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, ParamStore<T>& store, Adam<T>* opt = nullptr,
                     const nlohmann::json& extra = nlohmann::json::object()) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "mepoi-checkpoint-v1";
  manifest["dtype"] = dtype_name<T>();
  manifest["endianness"] = "little";
  manifest["params"] = nlohmann::json::array();
  for (std::size_t i = 0; i < store.size(); ++i) {
    Param<T>& p = store.at(i);
    const std::string file = tensor_file_name(i, p.name);
    write_raw(dir / file, p.value);
    manifest["params"].push_back({{"name", p.name}, {"shape", p.value.shape()}, {"file", file}});
    if (opt) {
      write_raw(dir / (file + ".m"), opt->moment1(i));
      write_raw(dir / (file + ".v"), opt->moment2(i));
    }
  }
  if (opt) {
    manifest["optimizer"] = {{"kind", opt->config().weight_decay > 0.0 ? "adamw" : "adam"},
                             {"lr", opt->config().lr},
                             {"beta1", opt->config().beta1},
                             {"beta2", opt->config().beta2},
                             {"eps", opt->config().eps},
                             {"weight_decay", opt->config().weight_decay},
                             {"step", opt->step_count()}};
  }
  if (!extra.empty()) manifest["extra"] = extra;
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  check(f.good(), "save_checkpoint: cannot write manifest in " + dir.string());
  f << manifest.dump(2) << "\n";
}

inline nlohmann::json load_manifest(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  check(f.good(), "load_checkpoint: missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  f >> manifest;
  check(manifest.value("format", "") == "mepoi-checkpoint-v1",
        "load_checkpoint: unrecognized checkpoint format in " + dir.string());
  return manifest;
}

// Loads parameter values (and optimizer moments when present) into an
// existing store. Every manifest entry must match a parameter of the same
// name and shape; dtype must match the build's scalar width.
template <typename T>
void load_checkpoint(const std::filesystem::path& dir, ParamStore<T>& store, Adam<T>* opt = nullptr) {
  nlohmann::json manifest = load_manifest(dir);
  check(manifest.value("dtype", "") == dtype_name<T>(),
        "load_checkpoint: dtype " + manifest.value("dtype", std::string("?")) + " does not match this build (" +
            dtype_name<T>() + ")");
  for (const auto& entry : manifest["params"]) {
    const std::string name = entry["name"];
    Param<T>* p = store.find(name);
    check(p != nullptr, "load_checkpoint: parameter '" + name + "' not present in model");
    std::vector<i64> shape = entry["shape"].get<std::vector<i64>>();
    check(shape == p->value.shape(), "load_checkpoint: shape mismatch for '" + name + "'");
    const std::string file = entry["file"];
    p->value = read_raw<T>(dir / file, shape);
    if (opt) {
      std::size_t idx = 0;
      for (; idx < store.size(); ++idx)
        if (&store.at(idx) == p) break;
      opt->moment1(idx) = read_raw<T>(dir / (file + ".m"), shape);
      opt->moment2(idx) = read_raw<T>(dir / (file + ".v"), shape);
    }
  }
  if (opt && manifest.contains("optimizer")) opt->set_step_count(manifest["optimizer"]["step"].get<i64>());
}

}  // namespace mepoi
