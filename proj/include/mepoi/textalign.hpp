#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mepoi/init.hpp"
#include "mepoi/optim.hpp"
#include "mepoi/prototypes.hpp"
#include "mepoi/rng.hpp"
#include "mepoi/tape.hpp"
#include "mepoi/world.hpp"

namespace mepoi {

// A rendered natural-language description of one POI: its coordinates,
// category, name, and address, followed by the nearest POIs with rounded
// distance and 8-way compass direction.
struct PoiPrompt {
  i64 poi_id = 0;
  std::string text;
};

// Deterministic description of `poi` in the context of `world`. Neighbors are
// the 10 closest other POIs by great-circle distance, ties broken by id;
// fewer appear only when the world itself is smaller.
PoiPrompt build_prompt(const Poi& poi, const World& world);

// Prompts for every POI in the world, in id order.
std::vector<PoiPrompt> build_all_prompts(const World& world);

// Writes one .txt file per POI under `dir`, named poi_<id>.txt, for handing
// prompts to an external embedding service.
void write_prompt_files(const std::string& dir, const std::vector<PoiPrompt>& prompts);

// Signed feature hashing of the text's token n-grams into `dim` buckets,
// L2-normalized. Deterministic across runs and platforms.
std::vector<double> hash_embed_text(const std::string& text, i64 dim);

// Embeddings produced by an external model, one {poi_id, vector} JSON object
// per line.
struct TextEmbeddingRecord {
  i64 poi_id = 0;
  std::vector<double> vector;
};
void write_text_embeddings_jsonl(const std::string& path, const std::vector<TextEmbeddingRecord>& records);
std::vector<TextEmbeddingRecord> load_text_embeddings_jsonl(const std::string& path);

// Source of per-POI text embeddings. Implementations must be deterministic:
// the same prompt always maps to the same vector.
template <typename T>
class TextProvider {
 public:
  virtual ~TextProvider() = default;
  virtual i64 dim() const = 0;
  virtual std::vector<T> embed(const PoiPrompt& prompt) const = 0;
};

// Offline default. No model weights and no network, yet similar texts land
// near each other because they share most of their n-grams.
template <typename T>
class HashTextProvider : public TextProvider<T> {
 public:
  explicit HashTextProvider(i64 dim = 768) : dim_(dim) {
    check(dim_ >= 1, "hash text provider: dim must be positive");
  }

  i64 dim() const override { return dim_; }

  std::vector<T> embed(const PoiPrompt& prompt) const override {
    const std::vector<double> v = hash_embed_text(prompt.text, dim_);
    return std::vector<T>(v.begin(), v.end());
  }

 private:
  i64 dim_;
};

// Serves precomputed embeddings loaded from a JSONL file. Lookup is by POI
// id; asking for an id the file does not cover is an error.
template <typename T>
class FileTextProvider : public TextProvider<T> {
 public:
  explicit FileTextProvider(const std::string& path) {
    const auto records = load_text_embeddings_jsonl(path);
    check(!records.empty(), path + ": no text embeddings found");
    dim_ = static_cast<i64>(records.front().vector.size());
    for (const TextEmbeddingRecord& r : records) {
      check(static_cast<i64>(r.vector.size()) == dim_,
            path + ": POI " + std::to_string(r.poi_id) + " has dimension " +
                std::to_string(r.vector.size()) + ", expected " + std::to_string(dim_));
      const bool fresh = vectors_.emplace(r.poi_id, std::vector<T>(r.vector.begin(), r.vector.end())).second;
      check(fresh, path + ": duplicate embedding for POI " + std::to_string(r.poi_id));
    }
  }

  i64 dim() const override { return dim_; }

  std::vector<T> embed(const PoiPrompt& prompt) const override {
    auto it = vectors_.find(prompt.poi_id);
    check(it != vectors_.end(), "no precomputed text embedding for POI id " + std::to_string(prompt.poi_id));
    return it->second;
  }

 private:
  i64 dim_ = 0;
  std::unordered_map<i64, std::vector<T>> vectors_;
};

// Embeds a batch of prompts into an [n x dim] matrix, row i for prompts[i].
template <typename T>
Tensor<T> embed_prompts(const std::vector<PoiPrompt>& prompts, const TextProvider<T>& provider) {
  check(!prompts.empty(), "embed_prompts: at least one prompt required");
  Tensor<T> out = Tensor<T>::zeros({static_cast<i64>(prompts.size()), provider.dim()});
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const std::vector<T> v = provider.embed(prompts[i]);
    for (i64 c = 0; c < provider.dim(); ++c) out.at(static_cast<i64>(i), c) = v[static_cast<std::size_t>(c)];
  }
  return out;
}

// Learnable linear map from text space (d_u) into mobility space (d_h).
template <typename T>
class TextProjection {
 public:
  TextProjection(ParamStore<T>& store, i64 mobility_dim, i64 text_dim, const Rng& init_rng)
      : mobility_dim_(mobility_dim), text_dim_(text_dim) {
    check(mobility_dim_ >= 1 && text_dim_ >= 1, "text projection: dims must be positive");
    Rng r = init_rng.child("text_align");
    w_ = &store.add("text_align.w", xavier_uniform<T>(mobility_dim_, text_dim_, r));
  }

  i64 mobility_dim() const { return mobility_dim_; }
  i64 text_dim() const { return text_dim_; }
  Param<T>& param() { return *w_; }
  const Param<T>& param() const { return *w_; }

 private:
  i64 mobility_dim_;
  i64 text_dim_;
  Param<T>* w_ = nullptr;
};

// Mean over rows of 1 - cos(z_i, W t_i), where z is [n x d_h] on the tape and
// text is a constant [n x d_u] matrix. Gradients reach z and W.
template <typename T>
Value<T> text_align_loss(Tape<T>& tape, Value<T> z, const Tensor<T>& text, TextProjection<T>& proj) {
  const Tensor<T>& zv = tape.val(z);
  check(zv.rank() == 2 && zv.cols() == proj.mobility_dim(),
        "text_align_loss: mobility rows must be [n x mobility dim]");
  check(text.rank() == 2 && text.cols() == proj.text_dim(),
        "text_align_loss: text rows must be [n x text dim]");
  check(text.rows() == zv.rows(), "text_align_loss: one text row per mobility row required");
  Value<T> projected = ops::matmul_nt(tape.constant(text), tape.leaf(proj.param()));
  Value<T> cos = ops::cosine_rows(z, projected, T(1e-12));
  return ops::mean_all(ops::affine(cos, T(-1), T(1)));
}

// Convenience form that pulls the mobility rows out of the prototype bank.
template <typename T>
Value<T> text_align_loss(Tape<T>& tape, PrototypeBank<T>& bank, const std::vector<i64>& poi_ids,
                         const Tensor<T>& text, TextProjection<T>& proj) {
  std::vector<i64> rows(poi_ids.size());
  for (std::size_t i = 0; i < poi_ids.size(); ++i) rows[i] = bank.row(poi_ids[i]);
  Value<T> z = ops::gather_rows(tape.leaf(bank.param()), rows);
  return text_align_loss(tape, z, text, proj);
}

}  // namespace mepoi
