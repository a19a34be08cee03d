#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <unordered_map>
#include <vector>

#include "mepoi/init.hpp"
#include "mepoi/optim.hpp"
#include "mepoi/rng.hpp"
#include "mepoi/tape.hpp"

namespace mepoi {

// Learnable per-POI embedding rows with an id -> row map. Every POI in the
// study set owns exactly one row, anchors and sparse alike; ids need not be
// contiguous.
template <typename T>
class PrototypeBank {
 public:
  PrototypeBank(ParamStore<T>& store, const std::vector<i64>& poi_ids, i64 dim, const Rng& init_rng)
      : ids_(poi_ids), dim_(dim) {
    check(dim_ >= 1, "prototype bank: dim must be positive");
    check(!ids_.empty(), "prototype bank: at least one POI required");
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      const bool fresh = row_of_.emplace(ids_[i], static_cast<i64>(i)).second;
      check(fresh, "prototype bank: duplicate POI id " + std::to_string(ids_[i]));
    }
    // Cosine similarity discards magnitude, so rows start at unit scale.
    Rng r = init_rng.child("prototypes");
    z_ = &store.add("prototypes.z",
                    gaussian_init<T>(static_cast<i64>(ids_.size()), dim_, 1.0 / std::sqrt(static_cast<double>(dim_)), r));
  }

  i64 dim() const { return dim_; }
  i64 size() const { return static_cast<i64>(ids_.size()); }
  const std::vector<i64>& poi_ids() const { return ids_; }
  Param<T>& param() { return *z_; }
  const Param<T>& param() const { return *z_; }

  i64 row(i64 poi_id) const {
    auto it = row_of_.find(poi_id);
    check(it != row_of_.end(), "no prototype for POI id " + std::to_string(poi_id));
    return it->second;
  }

  // Current embedding of one POI, copied out.
  Tensor<T> lookup(i64 poi_id) const {
    const i64 r = row(poi_id);
    Tensor<T> out = Tensor<T>::zeros({dim_});
    for (i64 c = 0; c < dim_; ++c) out.at(c) = z_->value.at(r, c);
    return out;
  }

 private:
  std::vector<i64> ids_;
  i64 dim_;
  std::unordered_map<i64, i64> row_of_;
  Param<T>* z_ = nullptr;
};

// Contrastive alignment of contextualized visits with their POI prototypes.
// candidate_pois is the batch's candidate set (duplicates collapse, set
// semantics); each visit's own prototype is the positive and appears exactly
// once in the denominator. Similarities are cosine, scaled by 1/temperature,
// and the loss is the mean cross entropy over visits. Gradients reach both
// the visit embeddings and the gathered prototype rows; rows outside the
// candidate set stay untouched.
//
// A candidate set with fewer than two POIs leaves no negatives, so the loss
// is undefined; the call returns a default Value and the caller skips the
// term. Every id must be registered in the bank even then (an unattributed
// visit reaching this point is a caller bug, not a skip).
template <typename T>
Value<T> info_nce(Tape<T>& tape, Value<T> h, const std::vector<i64>& visit_pois,
                  const std::vector<i64>& candidate_pois, PrototypeBank<T>& bank, T temperature) {
  check(temperature > T(0), "info_nce: temperature must be positive");
  const Tensor<T>& hv = tape.val(h);
  check(hv.rank() == 2 && hv.cols() == bank.dim(), "info_nce: visit embeddings must be [n x prototype dim]");
  check(static_cast<i64>(visit_pois.size()) == hv.rows(), "info_nce: one POI id per visit row required");
  for (i64 p : visit_pois) bank.row(p);

  std::vector<i64> batch_pois = candidate_pois;
  std::sort(batch_pois.begin(), batch_pois.end());
  batch_pois.erase(std::unique(batch_pois.begin(), batch_pois.end()), batch_pois.end());

  std::vector<i64> targets(visit_pois.size());
  for (std::size_t i = 0; i < visit_pois.size(); ++i) {
    const auto it = std::lower_bound(batch_pois.begin(), batch_pois.end(), visit_pois[i]);
    check(it != batch_pois.end() && *it == visit_pois[i],
          "info_nce: visit POI " + std::to_string(visit_pois[i]) + " missing from the candidate set");
    targets[i] = it - batch_pois.begin();
  }
  if (batch_pois.size() < 2) return Value<T>{};

  std::vector<i64> rows(batch_pois.size());
  for (std::size_t i = 0; i < batch_pois.size(); ++i) rows[i] = bank.row(batch_pois[i]);

  Value<T> z = ops::gather_rows(tape.leaf(bank.param()), rows);
  Value<T> sims = ops::matmul_nt(ops::l2_normalize_rows(h, T(1e-12)), ops::l2_normalize_rows(z, T(1e-12)));
  Value<T> logits = ops::affine(sims, T(1) / temperature, T(0));
  return ops::softmax_xent_rows(logits, targets);
}

// Common case: the candidate set is exactly the POIs visited in the batch.
template <typename T>
Value<T> info_nce(Tape<T>& tape, Value<T> h, const std::vector<i64>& visit_pois, PrototypeBank<T>& bank,
                  T temperature) {
  return info_nce(tape, h, visit_pois, visit_pois, bank, temperature);
}

// Snapshot of a bank ready for files: ids in row order plus the raw matrix
// bytes. Keeping bytes rather than decoded doubles lets round-trips stay
// bit-exact in either precision. Files assume a little-endian host.
struct EmbeddingExport {
  std::vector<std::int64_t> poi_ids;
  std::int64_t dim = 0;
  std::string dtype;               // "f32" or "f64"
  std::vector<unsigned char> raw;  // row-major, poi_ids.size() * dim values

  std::vector<double> as_doubles() const;
};

template <typename T>
EmbeddingExport make_embedding_export(const PrototypeBank<T>& bank) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8, "unsupported scalar width");
  EmbeddingExport e;
  e.poi_ids = bank.poi_ids();
  e.dim = bank.dim();
  e.dtype = sizeof(T) == 4 ? "f32" : "f64";
  const Tensor<T>& v = bank.param().value;
  e.raw.resize(static_cast<std::size_t>(v.size()) * sizeof(T));
  std::memcpy(e.raw.data(), v.data(), e.raw.size());
  return e;
}

// Manifest JSON names the matrix file (stored next to the manifest) along
// with ids, dim, and dtype; the matrix file is the raw row-major values.
void write_embedding_files(const std::string& manifest_path, const std::string& matrix_filename,
                           const EmbeddingExport& e);
EmbeddingExport load_embedding_files(const std::string& manifest_path);
void write_embedding_csv(const std::string& path, const EmbeddingExport& e);

}  // namespace mepoi
