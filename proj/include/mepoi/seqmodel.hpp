#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mepoi/init.hpp"
#include "mepoi/optim.hpp"
#include "mepoi/tape.hpp"

namespace mepoi {

struct TransformerConfig {
  int layers = 4;
  int heads = 8;
  int d_model = 512;
  int ffn_dim = 1024;
  int window = 32;
  double ln_eps = 1e-5;
};

// Additive attention mask for a batch of equal-length windows flattened to
// [B*window] rows: row r of window b may attend the first lens[b] positions.
// Padded rows get an all-zero mask row (attend anything) so softmax stays
// defined; their outputs are never read downstream because every later op is
// row-local.
template <typename T>
Tensor<T> window_attention_mask(const std::vector<int>& lens, i64 window) {
  check(window >= 1, "window must be positive");
  const i64 batches = static_cast<i64>(lens.size());
  Tensor<T> mask = Tensor<T>::zeros({batches * window, window});
  const T neg_inf = -std::numeric_limits<T>::infinity();
  for (i64 b = 0; b < batches; ++b) {
    const int len = lens[static_cast<std::size_t>(b)];
    check(len >= 1 && len <= window, "window length out of range");
    for (i64 r = 0; r < len; ++r) {
      for (i64 c = len; c < window; ++c) mask.at(b * window + r, c) = neg_inf;
    }
  }
  return mask;
}

// Post-norm transformer encoder over flattened windows. All windows in a
// batch share the same length `window`; attention never crosses window
// boundaries, so one big [B*window x d] matrix flows through the projections
// and only the score/mix ops are window-aware.
template <typename T>
class Transformer {
 public:
  Transformer(ParamStore<T>& store, const TransformerConfig& cfg, const Rng& init_rng) : cfg_(cfg) {
    check(cfg.layers >= 1, "transformer needs at least one layer");
    check(cfg.heads >= 1 && cfg.d_model % cfg.heads == 0, "d_model must divide evenly into heads");
    check(cfg.ffn_dim >= 1 && cfg.window >= 1, "ffn_dim and window must be positive");
    const i64 d = cfg.d_model;
    const i64 f = cfg.ffn_dim;
    layers_.resize(static_cast<std::size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l) {
      Rng lr = init_rng.child("transformer", static_cast<std::uint64_t>(l));
      const std::string p = "transformer.l" + std::to_string(l) + ".";
      Layer& L = layers_[static_cast<std::size_t>(l)];
      Rng r1 = lr.child("wq");
      Rng r2 = lr.child("wk");
      Rng r3 = lr.child("wv");
      Rng r4 = lr.child("wo");
      Rng r5 = lr.child("ffn");
      L.wq = &store.add(p + "wq", xavier_uniform<T>(d, d, r1));
      L.wk = &store.add(p + "wk", xavier_uniform<T>(d, d, r2));
      L.wv = &store.add(p + "wv", xavier_uniform<T>(d, d, r3));
      L.wo = &store.add(p + "wo", xavier_uniform<T>(d, d, r4));
      L.w1 = &store.add(p + "ffn.w1", xavier_uniform<T>(d, f, r5));
      L.b1 = &store.add(p + "ffn.b1", Tensor<T>::zeros({f}));
      L.w2 = &store.add(p + "ffn.w2", xavier_uniform<T>(f, d, r5));
      L.b2 = &store.add(p + "ffn.b2", Tensor<T>::zeros({d}));
      L.ln1_gain = &store.add(p + "ln1.gain", Tensor<T>::full({d}, T(1)));
      L.ln1_bias = &store.add(p + "ln1.bias", Tensor<T>::zeros({d}));
      L.ln2_gain = &store.add(p + "ln2.gain", Tensor<T>::full({d}, T(1)));
      L.ln2_bias = &store.add(p + "ln2.bias", Tensor<T>::zeros({d}));
    }
  }

  const TransformerConfig& config() const { return cfg_; }

  Value<T> forward(Tape<T>& tape, Value<T> x, const Tensor<T>& mask) const {
    const Tensor<T>& xv = tape.val(x);
    check(xv.rank() == 2 && xv.cols() == cfg_.d_model, "forward: input width must equal d_model");
    check(xv.rows() % cfg_.window == 0, "forward: rows must be a multiple of the window length");
    check(mask.rank() == 2 && mask.rows() == xv.rows() && mask.cols() == cfg_.window,
          "forward: mask must be [rows x window]");

    const i64 dk = cfg_.d_model / cfg_.heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    const T eps = static_cast<T>(cfg_.ln_eps);
    Value<T> mask_v = tape.constant(mask);

    for (const Layer& L : layers_) {
      Value<T> q = ops::matmul(x, tape.leaf(*L.wq));
      Value<T> k = ops::matmul(x, tape.leaf(*L.wk));
      Value<T> v = ops::matmul(x, tape.leaf(*L.wv));
      std::vector<Value<T>> heads;
      heads.reserve(static_cast<std::size_t>(cfg_.heads));
      for (int h = 0; h < cfg_.heads; ++h) {
        Value<T> qh = ops::slice_cols(q, h * dk, (h + 1) * dk);
        Value<T> kh = ops::slice_cols(k, h * dk, (h + 1) * dk);
        Value<T> vh = ops::slice_cols(v, h * dk, (h + 1) * dk);
        Value<T> scores = ops::add(ops::window_scores(qh, kh, cfg_.window, scale), mask_v);
        Value<T> attn = ops::softmax_rows(scores);
        heads.push_back(ops::window_mix(attn, vh, cfg_.window));
      }
      Value<T> mixed = ops::matmul(ops::concat_cols(heads), tape.leaf(*L.wo));
      x = ops::layernorm_rows(ops::add(x, mixed), tape.leaf(*L.ln1_gain), tape.leaf(*L.ln1_bias), eps);

      Value<T> hidden = ops::relu(ops::add_rowvec(ops::matmul(x, tape.leaf(*L.w1)), tape.leaf(*L.b1)));
      Value<T> out = ops::add_rowvec(ops::matmul(hidden, tape.leaf(*L.w2)), tape.leaf(*L.b2));
      x = ops::layernorm_rows(ops::add(x, out), tape.leaf(*L.ln2_gain), tape.leaf(*L.ln2_bias), eps);
    }
    return x;
  }

 private:
  struct Layer {
    Param<T>* wq;
    Param<T>* wk;
    Param<T>* wv;
    Param<T>* wo;
    Param<T>* w1;
    Param<T>* b1;
    Param<T>* w2;
    Param<T>* b2;
    Param<T>* ln1_gain;
    Param<T>* ln1_bias;
    Param<T>* ln2_gain;
    Param<T>* ln2_bias;
  };

  TransformerConfig cfg_;
  std::vector<Layer> layers_;
};

}  // namespace mepoi
