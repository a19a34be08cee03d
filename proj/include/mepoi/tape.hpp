#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "mepoi/tensor.hpp"

namespace mepoi {

// Named trainable tensor. Gradients accumulate across backward calls until
// zeroed by the optimizer loop.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; invalid once the tape dies.
template <typename T>
struct Value {
  Tape<T>* tape = nullptr;
  i64 id = -1;
  bool defined() const { return tape != nullptr; }
};

// Reverse-mode tape. Operations append nodes in topological order; backward
// walks them once in reverse. Constants never allocate gradient storage, so
// large fixed inputs (location features, masks) cost nothing extra.
template <typename T>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, i64)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily during backward
    BackFn back;
    Param<T>* param = nullptr;
    bool needs_grad = false;
  };

  Value<T> constant(Tensor<T> v) { return emit(std::move(v), false, nullptr); }

  Value<T> leaf(Param<T>& p) {
    check(p.value.defined(), "leaf: parameter '" + p.name + "' has no value");
    if (!p.grad.defined()) p.grad = Tensor<T>::zeros(p.value.shape());
    Value<T> v = emit(p.value, true, nullptr);
    nodes_[static_cast<std::size_t>(v.id)].param = &p;
    return v;
  }

  Value<T> emit(Tensor<T> v, bool needs_grad, BackFn back) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Value<T>{this, static_cast<i64>(nodes_.size()) - 1};
  }

  const Tensor<T>& val(Value<T> v) const {
    check(v.tape == this && v.id >= 0 && v.id < static_cast<i64>(nodes_.size()), "val: foreign value");
    return nodes_[static_cast<std::size_t>(v.id)].value;
  }

  bool needs_grad(Value<T> v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  // Gradient buffer for accumulation, or nullptr when the node does not
  // participate in differentiation.
  Tensor<T>* grad_buf(i64 id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return nullptr;
    if (!n.grad.defined()) n.grad = Tensor<T>::zeros(n.value.shape());
    return &n.grad;
  }

  void accum(i64 id, const Tensor<T>& g) {
    if (Tensor<T>* buf = grad_buf(id)) add_inplace(*buf, g);
  }

  // Gradient of a node after backward; all-zeros for leaves the loss never
  // touched.
  Tensor<T> grad(Value<T> v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.defined()) return n.grad;
    return Tensor<T>::zeros(n.value.shape());
  }

  void backward(Value<T> loss) {
    check(loss.tape == this, "backward: value from another tape");
    check(!ran_, "backward: tape already differentiated");
    Node& top = nodes_[static_cast<std::size_t>(loss.id)];
    check(top.value.size() == 1, "backward: loss must be scalar, got " + top.value.shape_str());
    check(top.needs_grad, "backward: loss does not depend on any parameter");
    ran_ = true;
    *grad_buf(loss.id)->data() = T(1);
    for (i64 id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.grad.defined()) continue;
      if (n.back) n.back(*this, id);
      if (n.param) add_inplace(n.param->grad, n.grad);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  bool ran_ = false;
};

namespace ops {

template <typename T>
Tape<T>& same_tape(Value<T> a, Value<T> b, const char* op) {
  check(a.tape != nullptr && a.tape == b.tape, std::string(op) + ": values from different tapes");
  return *a.tape;
}

template <typename T>
Value<T> add(Value<T> a, Value<T> b) {
  Tape<T>& tp = same_tape(a, b, "add");
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  check(av.same_shape(bv), "add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  Tensor<T> out = av.clone();
  add_inplace(out, bv);
  const i64 aid = a.id, bid = b.id;
  return tp.emit(std::move(out), tp.needs_grad(a) || tp.needs_grad(b), [aid, bid](Tape<T>& t, i64 id) {
    const Tensor<T>& g = *t.grad_buf(id);
    t.accum(aid, g);
    t.accum(bid, g);
  });
}

template <typename T>
Value<T> sub(Value<T> a, Value<T> b) {
  Tape<T>& tp = same_tape(a, b, "sub");
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  check(av.same_shape(bv), "sub: shape mismatch");
  Tensor<T> out = Tensor<T>::zeros(av.shape());
  for (i64 i = 0; i < out.size(); ++i) out.data()[i] = av.data()[i] - bv.data()[i];
  const i64 aid = a.id, bid = b.id;
  return tp.emit(std::move(out), tp.needs_grad(a) || tp.needs_grad(b), [aid, bid](Tape<T>& t, i64 id) {
    const Tensor<T>& g = *t.grad_buf(id);
    t.accum(aid, g);
    if (Tensor<T>* gb = t.grad_buf(bid))
      for (i64 i = 0; i < g.size(); ++i) gb->data()[i] -= g.data()[i];
  });
}

template <typename T>
Value<T> mul(Value<T> a, Value<T> b) {
  Tape<T>& tp = same_tape(a, b, "mul");
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  check(av.same_shape(bv), "mul: shape mismatch");
  Tensor<T> out = Tensor<T>::zeros(av.shape());
  for (i64 i = 0; i < out.size(); ++i) out.data()[i] = av.data()[i] * bv.data()[i];
  const i64 aid = a.id, bid = b.id;
  Tensor<T> asave = av, bsave = bv;
  return tp.emit(std::move(out), tp.needs_grad(a) || tp.needs_grad(b),
                 [aid, bid, asave, bsave](Tape<T>& t, i64 id) {
                   const Tensor<T>& g = *t.grad_buf(id);
                   if (Tensor<T>* ga = t.grad_buf(aid))
                     for (i64 i = 0; i < g.size(); ++i) ga->data()[i] += g.data()[i] * bsave.data()[i];
                   if (Tensor<T>* gb = t.grad_buf(bid))
                     for (i64 i = 0; i < g.size(); ++i) gb->data()[i] += g.data()[i] * asave.data()[i];
                 });
}

// y = alpha * x + beta, elementwise with scalar coefficients.
template <typename T>
Value<T> affine(Value<T> x, T alpha, T beta) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x);
  Tensor<T> out = Tensor<T>::zeros(xv.shape());
  for (i64 i = 0; i < out.size(); ++i) out.data()[i] = alpha * xv.data()[i] + beta;
  const i64 xid = x.id;
  return tp.emit(std::move(out), tp.needs_grad(x), [xid, alpha](Tape<T>& t, i64 id) {
    const Tensor<T>& g = *t.grad_buf(id);
    if (Tensor<T>* gx = t.grad_buf(xid))
      for (i64 i = 0; i < g.size(); ++i) gx->data()[i] += alpha * g.data()[i];
  });
}

template <typename T>
Value<T> relu(Value<T> x) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x);
  Tensor<T> out = Tensor<T>::zeros(xv.shape());
  for (i64 i = 0; i < out.size(); ++i) out.data()[i] = xv.data()[i] > T(0) ? xv.data()[i] : T(0);
  const i64 xid = x.id;
  Tensor<T> xsave = xv;
  return tp.emit(std::move(out), tp.needs_grad(x), [xid, xsave](Tape<T>& t, i64 id) {
    const Tensor<T>& g = *t.grad_buf(id);
    if (Tensor<T>* gx = t.grad_buf(xid))
      for (i64 i = 0; i < g.size(); ++i)
        if (xsave.data()[i] > T(0)) gx->data()[i] += g.data()[i];
  });
}

template <typename T>
Value<T> sigmoid(Value<T> x) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x);
  Tensor<T> out = Tensor<T>::zeros(xv.shape());
  for (i64 i = 0; i < out.size(); ++i) {
    const T z = xv.data()[i];
    out.data()[i] = z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
  }
  const i64 xid = x.id;
  Tensor<T> ysave = out;
  return tp.emit(std::move(out), tp.needs_grad(x), [xid, ysave](Tape<T>& t, i64 id) {
    const Tensor<T>& g = *t.grad_buf(id);
    if (Tensor<T>* gx = t.grad_buf(xid))
      for (i64 i = 0; i < g.size(); ++i) {
        const T y = ysave.data()[i];
        gx->data()[i] += g.data()[i] * y * (T(1) - y);
      }
  });
}

// Adds a length-k row vector to every row of x[n,k].
template <typename T>
Value<T> add_rowvec(Value<T> x, Value<T> b) {
  Tape<T>& tp = same_tape(x, b, "add_rowvec");
  const Tensor<T>& xv = tp.val(x);
  const Tensor<T>& bv = tp.val(b);
  check(bv.rank() == 1 && xv.rank() == 2 && bv.shape()[0] == xv.cols(), "add_rowvec: bias length mismatch");
  Tensor<T> out = xv.clone();
  for (i64 r = 0; r < xv.rows(); ++r)
    for (i64 c = 0; c < xv.cols(); ++c) out.at(r, c) += bv.at(c);
  const i64 xid = x.id, bid = b.id;
  return tp.emit(std::move(out), tp.needs_grad(x) || tp.needs_grad(b), [xid, bid](Tape<T>& t, i64 id) {
    const Tensor<T>& g = *t.grad_buf(id);
    t.accum(xid, g);
    if (Tensor<T>* gb = t.grad_buf(bid))
      for (i64 r = 0; r < g.rows(); ++r)
        for (i64 c = 0; c < g.cols(); ++c) gb->at(c) += g.at(r, c);
  });
}

template <typename T>
Value<T> matmul(Value<T> a, Value<T> b) {
  Tape<T>& tp = same_tape(a, b, "matmul");
  Tensor<T> out = Tensor<T>::zeros({tp.val(a).rows(), tp.val(b).cols()});
  gemm_nn(tp.val(a), tp.val(b), out, false);
  const i64 aid = a.id, bid = b.id;
  Tensor<T> asave = tp.val(a), bsave = tp.val(b);
  return tp.emit(std::move(out), tp.needs_grad(a) || tp.needs_grad(b),
                 [aid, bid, asave, bsave](Tape<T>& t, i64 id) {
                   const Tensor<T>& g = *t.grad_buf(id);
                   if (Tensor<T>* ga = t.grad_buf(aid)) gemm_nt(g, bsave, *ga, true);
                   if (Tensor<T>* gb = t.grad_buf(bid)) gemm_tn(asave, g, *gb, true);
                 });
}

// a[m,k] * b[n,k]^T.
template <typename T>
Value<T> matmul_nt(Value<T> a, Value<T> b) {
  Tape<T>& tp = same_tape(a, b, "matmul_nt");
  Tensor<T> out = Tensor<T>::zeros({tp.val(a).rows(), tp.val(b).rows()});
  gemm_nt(tp.val(a), tp.val(b), out, false);
  const i64 aid = a.id, bid = b.id;
  Tensor<T> asave = tp.val(a), bsave = tp.val(b);
  return tp.emit(std::move(out), tp.needs_grad(a) || tp.needs_grad(b),
                 [aid, bid, asave, bsave](Tape<T>& t, i64 id) {
                   const Tensor<T>& g = *t.grad_buf(id);
                   if (Tensor<T>* ga = t.grad_buf(aid)) gemm_nn(g, bsave, *ga, true);
                   if (Tensor<T>* gb = t.grad_buf(bid)) gemm_tn(g, asave, *gb, true);
                 });
}

// Row-wise softmax with max subtraction. Rows of all -inf are a contract
// violation (an attention row must keep at least one unmasked key).
template <typename T>
Value<T> softmax_rows(Value<T> x) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x);
  check(xv.rank() == 2, "softmax_rows: rank-2 input required");
  Tensor<T> out = Tensor<T>::zeros(xv.shape());
  const i64 n = xv.rows(), k = xv.cols();
  for (i64 r = 0; r < n; ++r) {
    T m = -std::numeric_limits<T>::infinity();
    for (i64 c = 0; c < k; ++c) m = std::max(m, xv.at(r, c));
    check(std::isfinite(static_cast<double>(m)), "softmax_rows: row " + std::to_string(r) + " fully masked");
    T denom = T(0);
    for (i64 c = 0; c < k; ++c) {
      const T e = std::exp(xv.at(r, c) - m);
      out.at(r, c) = e;
      denom += e;
    }
    for (i64 c = 0; c < k; ++c) out.at(r, c) /= denom;
  }
  const i64 xid = x.id;
  Tensor<T> ysave = out;
  return tp.emit(std::move(out), tp.needs_grad(x), [xid, ysave](Tape<T>& t, i64 id) {
    const Tensor<T>& g = *t.grad_buf(id);
    Tensor<T>* gx = t.grad_buf(xid);
    if (!gx) return;
    for (i64 r = 0; r < g.rows(); ++r) {
      T dot = T(0);
      for (i64 c = 0; c < g.cols(); ++c) dot += g.at(r, c) * ysave.at(r, c);
      for (i64 c = 0; c < g.cols(); ++c) gx->at(r, c) += ysave.at(r, c) * (g.at(r, c) - dot);
    }
  });
}

// Row-wise layer normalization with learnable gain and bias.
template <typename T>
Value<T> layernorm_rows(Value<T> x, Value<T> gain, Value<T> bias, T eps) {
  Tape<T>& tp = same_tape(x, gain, "layernorm_rows");
  const Tensor<T>& xv = tp.val(x);
  const Tensor<T>& gv = tp.val(gain);
  const Tensor<T>& bv = tp.val(bias);
  check(xv.rank() == 2, "layernorm_rows: rank-2 input required");
  const i64 n = xv.rows(), k = xv.cols();
  check(gv.rank() == 1 && gv.shape()[0] == k && bv.rank() == 1 && bv.shape()[0] == k,
        "layernorm_rows: gain/bias length mismatch");
  Tensor<T> out = Tensor<T>::zeros(xv.shape());
  Tensor<T> xhat = Tensor<T>::zeros(xv.shape());
  Tensor<T> inv = Tensor<T>::zeros({n});
  for (i64 r = 0; r < n; ++r) {
    T mu = T(0);
    for (i64 c = 0; c < k; ++c) mu += xv.at(r, c);
    mu /= static_cast<T>(k);
    T var = T(0);
    for (i64 c = 0; c < k; ++c) {
      const T d = xv.at(r, c) - mu;
      var += d * d;
    }
    var /= static_cast<T>(k);
    const T is = T(1) / std::sqrt(var + eps);
    inv.at(r) = is;
    for (i64 c = 0; c < k; ++c) {
      const T xh = (xv.at(r, c) - mu) * is;
      xhat.at(r, c) = xh;
      out.at(r, c) = xh * gv.at(c) + bv.at(c);
    }
  }
  const i64 xid = x.id, gid = gain.id, bid = bias.id;
  Tensor<T> gsave = gv;
  return tp.emit(std::move(out), tp.needs_grad(x) || tp.needs_grad(gain) || tp.needs_grad(bias),
                 [xid, gid, bid, xhat, inv, gsave](Tape<T>& t, i64 id) {
                   const Tensor<T>& g = *t.grad_buf(id);
                   const i64 n = g.rows(), k = g.cols();
                   if (Tensor<T>* gb = t.grad_buf(bid))
                     for (i64 r = 0; r < n; ++r)
                       for (i64 c = 0; c < k; ++c) gb->at(c) += g.at(r, c);
                   if (Tensor<T>* gg = t.grad_buf(gid))
                     for (i64 r = 0; r < n; ++r)
                       for (i64 c = 0; c < k; ++c) gg->at(c) += g.at(r, c) * xhat.at(r, c);
                   if (Tensor<T>* gx = t.grad_buf(xid)) {
                     for (i64 r = 0; r < n; ++r) {
                       T mean_dxh = T(0), mean_dxh_xh = T(0);
                       for (i64 c = 0; c < k; ++c) {
                         const T dxh = g.at(r, c) * gsave.at(c);
                         mean_dxh += dxh;
                         mean_dxh_xh += dxh * xhat.at(r, c);
                       }
                       mean_dxh /= static_cast<T>(k);
                       mean_dxh_xh /= static_cast<T>(k);
                       for (i64 c = 0; c < k; ++c) {
                         const T dxh = g.at(r, c) * gsave.at(c);
                         gx->at(r, c) += inv.at(r) * (dxh - mean_dxh - xhat.at(r, c) * mean_dxh_xh);
                       }
                     }
                   }
                 });
}

template <typename T>
Value<T> l2_normalize_rows(Value<T> x, T eps) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x);
  check(xv.rank() == 2, "l2_normalize_rows: rank-2 input required");
  const i64 n = xv.rows(), k = xv.cols();
  Tensor<T> out = Tensor<T>::zeros(xv.shape());
  Tensor<T> norms = Tensor<T>::zeros({n});
  for (i64 r = 0; r < n; ++r) {
    T s = T(0);
    for (i64 c = 0; c < k; ++c) s += xv.at(r, c) * xv.at(r, c);
    const T nc = std::max(std::sqrt(s), eps);
    norms.at(r) = nc;
    for (i64 c = 0; c < k; ++c) out.at(r, c) = xv.at(r, c) / nc;
  }
  const i64 xid = x.id;
  Tensor<T> ysave = out;
  return tp.emit(std::move(out), tp.needs_grad(x), [xid, ysave, norms](Tape<T>& t, i64 id) {
    const Tensor<T>& g = *t.grad_buf(id);
    Tensor<T>* gx = t.grad_buf(xid);
    if (!gx) return;
    for (i64 r = 0; r < g.rows(); ++r) {
      T dot = T(0);
      for (i64 c = 0; c < g.cols(); ++c) dot += g.at(r, c) * ysave.at(r, c);
      for (i64 c = 0; c < g.cols(); ++c)
        gx->at(r, c) += (g.at(r, c) - ysave.at(r, c) * dot) / norms.at(r);
    }
  });
}

// Row-wise cosine similarity between a[n,d] and b[n,d] -> [n]. Zero rows are
// guarded by eps and yield 0.
template <typename T>
Value<T> cosine_rows(Value<T> a, Value<T> b, T eps) {
  Tape<T>& tp = same_tape(a, b, "cosine_rows");
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  check(av.rank() == 2 && av.same_shape(bv), "cosine_rows: matching rank-2 inputs required");
  const i64 n = av.rows(), d = av.cols();
  Tensor<T> out = Tensor<T>::zeros({n});
  Tensor<T> na = Tensor<T>::zeros({n}), nb = Tensor<T>::zeros({n});
  for (i64 r = 0; r < n; ++r) {
    T sa = T(0), sb = T(0), dot = T(0);
    for (i64 c = 0; c < d; ++c) {
      sa += av.at(r, c) * av.at(r, c);
      sb += bv.at(r, c) * bv.at(r, c);
      dot += av.at(r, c) * bv.at(r, c);
    }
    na.at(r) = std::max(std::sqrt(sa), eps);
    nb.at(r) = std::max(std::sqrt(sb), eps);
    out.at(r) = dot / (na.at(r) * nb.at(r));
  }
  const i64 aid = a.id, bid = b.id;
  Tensor<T> asave = av, bsave = bv, csave = out;
  return tp.emit(std::move(out), tp.needs_grad(a) || tp.needs_grad(b),
                 [aid, bid, asave, bsave, csave, na, nb](Tape<T>& t, i64 id) {
                   const Tensor<T>& g = *t.grad_buf(id);
                   const i64 n = asave.rows(), d = asave.cols();
                   Tensor<T>* ga = t.grad_buf(aid);
                   Tensor<T>* gb = t.grad_buf(bid);
                   for (i64 r = 0; r < n; ++r) {
                     const T gr = g.at(r), c = csave.at(r);
                     for (i64 cc = 0; cc < d; ++cc) {
                       const T ah = asave.at(r, cc) / na.at(r);
                       const T bh = bsave.at(r, cc) / nb.at(r);
                       if (ga) ga->at(r, cc) += gr * (bh - c * ah) / na.at(r);
                       if (gb) gb->at(r, cc) += gr * (ah - c * bh) / nb.at(r);
                     }
                   }
                 });
}

// out[i] = x[idx[i]], rows. Backward scatter-adds, so duplicate indices
// accumulate.
template <typename T>
Value<T> gather_rows(Value<T> x, const std::vector<i64>& idx) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x);
  check(xv.rank() == 2, "gather_rows: rank-2 input required");
  const i64 n = xv.rows(), d = xv.cols();
  Tensor<T> out = Tensor<T>::zeros({static_cast<i64>(idx.size()), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] >= 0 && idx[i] < n, "gather_rows: index " + std::to_string(idx[i]) + " out of range");
    std::copy(xv.data() + idx[i] * d, xv.data() + (idx[i] + 1) * d, out.data() + static_cast<i64>(i) * d);
  }
  const i64 xid = x.id;
  std::vector<i64> isave = idx;
  return tp.emit(std::move(out), tp.needs_grad(x), [xid, isave, d](Tape<T>& t, i64 id) {
    const Tensor<T>& g = *t.grad_buf(id);
    Tensor<T>* gx = t.grad_buf(xid);
    if (!gx) return;
    for (std::size_t i = 0; i < isave.size(); ++i)
      for (i64 c = 0; c < d; ++c) gx->at(isave[i], c) += g.at(static_cast<i64>(i), c);
  });
}

template <typename T>
Value<T> concat_cols(const std::vector<Value<T>>& parts) {
  check(!parts.empty(), "concat_cols: no inputs");
  Tape<T>& tp = *parts[0].tape;
  const i64 n = tp.val(parts[0]).rows();
  i64 total = 0;
  bool ng = false;
  for (const Value<T>& p : parts) {
    check(p.tape == &tp, "concat_cols: values from different tapes");
    check(tp.val(p).rank() == 2 && tp.val(p).rows() == n, "concat_cols: row counts disagree");
    total += tp.val(p).cols();
    ng = ng || tp.needs_grad(p);
  }
  Tensor<T> out = Tensor<T>::zeros({n, total});
  i64 off = 0;
  std::vector<std::pair<i64, i64>> spans;  // (node id, column offset)
  std::vector<i64> widths;
  for (const Value<T>& p : parts) {
    const Tensor<T>& pv = tp.val(p);
    for (i64 r = 0; r < n; ++r)
      std::copy(pv.data() + r * pv.cols(), pv.data() + (r + 1) * pv.cols(), out.data() + r * total + off);
    spans.emplace_back(p.id, off);
    widths.push_back(pv.cols());
    off += pv.cols();
  }
  return tp.emit(std::move(out), ng, [spans, widths, n, total](Tape<T>& t, i64 id) {
    const Tensor<T>& g = *t.grad_buf(id);
    for (std::size_t i = 0; i < spans.size(); ++i) {
      Tensor<T>* gp = t.grad_buf(spans[i].first);
      if (!gp) continue;
      const i64 off = spans[i].second, w = widths[i];
      for (i64 r = 0; r < n; ++r)
        for (i64 c = 0; c < w; ++c) gp->at(r, c) += g.data()[r * total + off + c];
    }
  });
}

template <typename T>
Value<T> slice_cols(Value<T> x, i64 c0, i64 c1) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x);
  check(xv.rank() == 2 && c0 >= 0 && c1 > c0 && c1 <= xv.cols(), "slice_cols: bad column range");
  const i64 n = xv.rows(), w = c1 - c0, k = xv.cols();
  Tensor<T> out = Tensor<T>::zeros({n, w});
  for (i64 r = 0; r < n; ++r)
    std::copy(xv.data() + r * k + c0, xv.data() + r * k + c1, out.data() + r * w);
  const i64 xid = x.id;
  return tp.emit(std::move(out), tp.needs_grad(x), [xid, c0, w, k, n](Tape<T>& t, i64 id) {
    const Tensor<T>& g = *t.grad_buf(id);
    Tensor<T>* gx = t.grad_buf(xid);
    if (!gx) return;
    for (i64 r = 0; r < n; ++r)
      for (i64 c = 0; c < w; ++c) gx->data()[r * k + c0 + c] += g.data()[r * w + c];
  });
}

// Per-window attention scores: q and k are [B*w, dk] stacked windows; output
// row b*w+i holds scale * <q_i, k_j> for the w keys of window b.
template <typename T>
Value<T> window_scores(Value<T> q, Value<T> k, i64 w, T scale) {
  Tape<T>& tp = same_tape(q, k, "window_scores");
  const Tensor<T>& qv = tp.val(q);
  const Tensor<T>& kv = tp.val(k);
  check(qv.same_shape(kv) && qv.rank() == 2, "window_scores: q/k shape mismatch");
  check(qv.rows() % w == 0, "window_scores: row count not a multiple of the window length");
  const i64 nb = qv.rows() / w, dk = qv.cols();
  Tensor<T> out = Tensor<T>::zeros({qv.rows(), w});
  parallel_for(nb, [&](i64 lo, i64 hi) {
    for (i64 b = lo; b < hi; ++b) {
      detail::ECMap<T> Q(qv.data() + b * w * dk, w, dk), K(kv.data() + b * w * dk, w, dk);
      detail::EMap<T> S(out.data() + b * w * w, w, w);
      S.noalias() = Q * K.transpose();
      S *= scale;
    }
  });
  const i64 qid = q.id, kid = k.id;
  Tensor<T> qsave = qv, ksave = kv;
  return tp.emit(std::move(out), tp.needs_grad(q) || tp.needs_grad(k),
                 [qid, kid, qsave, ksave, w, scale](Tape<T>& t, i64 id) {
                   const Tensor<T>& g = *t.grad_buf(id);
                   const i64 nb = qsave.rows() / w, dk = qsave.cols();
                   Tensor<T>* gq = t.grad_buf(qid);
                   Tensor<T>* gk = t.grad_buf(kid);
                   parallel_for(nb, [&](i64 lo, i64 hi) {
                     for (i64 b = lo; b < hi; ++b) {
                       detail::ECMap<T> G(g.data() + b * w * w, w, w);
                       detail::ECMap<T> Q(qsave.data() + b * w * dk, w, dk), K(ksave.data() + b * w * dk, w, dk);
                       if (gq) {
                         detail::EMap<T> GQ(gq->data() + b * w * dk, w, dk);
                         GQ.noalias() += scale * (G * K);
                       }
                       if (gk) {
                         detail::EMap<T> GK(gk->data() + b * w * dk, w, dk);
                         GK.noalias() += scale * (G.transpose() * Q);
                       }
                     }
                   });
                 });
}

// Per-window attention application: a is [B*w, w] row-stochastic blocks, v is
// [B*w, dk]; output window b is A_b * V_b.
template <typename T>
Value<T> window_mix(Value<T> a, Value<T> v, i64 w) {
  Tape<T>& tp = same_tape(a, v, "window_mix");
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& vv = tp.val(v);
  check(av.rank() == 2 && av.cols() == w && av.rows() % w == 0, "window_mix: bad attention shape");
  check(vv.rows() == av.rows(), "window_mix: value rows disagree");
  const i64 nb = av.rows() / w, dk = vv.cols();
  Tensor<T> out = Tensor<T>::zeros({vv.rows(), dk});
  parallel_for(nb, [&](i64 lo, i64 hi) {
    for (i64 b = lo; b < hi; ++b) {
      detail::ECMap<T> A(av.data() + b * w * w, w, w), V(vv.data() + b * w * dk, w, dk);
      detail::EMap<T> O(out.data() + b * w * dk, w, dk);
      O.noalias() = A * V;
    }
  });
  const i64 aid = a.id, vid = v.id;
  Tensor<T> asave = av, vsave = vv;
  return tp.emit(std::move(out), tp.needs_grad(a) || tp.needs_grad(v),
                 [aid, vid, asave, vsave, w](Tape<T>& t, i64 id) {
                   const Tensor<T>& g = *t.grad_buf(id);
                   const i64 nb = asave.rows() / w, dk = vsave.cols();
                   Tensor<T>* ga = t.grad_buf(aid);
                   Tensor<T>* gv = t.grad_buf(vid);
                   parallel_for(nb, [&](i64 lo, i64 hi) {
                     for (i64 b = lo; b < hi; ++b) {
                       detail::ECMap<T> G(g.data() + b * w * dk, w, dk);
                       detail::ECMap<T> A(asave.data() + b * w * w, w, w), V(vsave.data() + b * w * dk, w, dk);
                       if (ga) {
                         detail::EMap<T> GA(ga->data() + b * w * w, w, w);
                         GA.noalias() += G * V.transpose();
                       }
                       if (gv) {
                         detail::EMap<T> GV(gv->data() + b * w * dk, w, dk);
                         GV.noalias() += A.transpose() * G;
                       }
                     }
                   });
                 });
}

// Time2Vec block over a batch of scalar times tau[n]: column 0 is the linear
// component omega_0 * tau + phi_0, columns j >= 1 are sin(omega_j * tau +
// phi_j). tau is data, not a differentiable input.
template <typename T>
Value<T> time2vec_block(Tape<T>& tp, const Tensor<T>& tau, Value<T> omega, Value<T> phi) {
  const Tensor<T>& ov = tp.val(omega);
  const Tensor<T>& pv = tp.val(phi);
  check(tau.rank() == 1, "time2vec_block: tau must be rank-1");
  check(ov.rank() == 1 && pv.rank() == 1 && ov.same_shape(pv), "time2vec_block: omega/phi shape mismatch");
  const i64 n = tau.shape()[0], k = ov.shape()[0];
  check(k >= 2, "time2vec_block: need at least one periodic component");
  Tensor<T> out = Tensor<T>::zeros({n, k});
  for (i64 r = 0; r < n; ++r) {
    out.at(r, 0) = ov.at(0) * tau.at(r) + pv.at(0);
    for (i64 c = 1; c < k; ++c) out.at(r, c) = std::sin(ov.at(c) * tau.at(r) + pv.at(c));
  }
  const i64 oid = omega.id, pid = phi.id;
  Tensor<T> tsave = tau, osave = ov, psave = pv;
  return tp.emit(std::move(out), tp.needs_grad(omega) || tp.needs_grad(phi),
                 [oid, pid, tsave, osave, psave](Tape<T>& t, i64 id) {
                   const Tensor<T>& g = *t.grad_buf(id);
                   const i64 n = g.rows(), k = g.cols();
                   Tensor<T>* go = t.grad_buf(oid);
                   Tensor<T>* gp = t.grad_buf(pid);
                   for (i64 r = 0; r < n; ++r) {
                     if (go) go->at(0) += g.at(r, 0) * tsave.at(r);
                     if (gp) gp->at(0) += g.at(r, 0);
                     for (i64 c = 1; c < k; ++c) {
                       const T cosv = std::cos(osave.at(c) * tsave.at(r) + psave.at(c));
                       if (go) go->at(c) += g.at(r, c) * tsave.at(r) * cosv;
                       if (gp) gp->at(c) += g.at(r, c) * cosv;
                     }
                   }
                 });
}

template <typename T>
Value<T> sum_all(Value<T> x) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x);
  T s = T(0);
  for (i64 i = 0; i < xv.size(); ++i) s += xv.data()[i];
  const i64 xid = x.id;
  return tp.emit(Tensor<T>::scalar(s), tp.needs_grad(x), [xid](Tape<T>& t, i64 id) {
    const T g = *t.grad_buf(id)->data();
    if (Tensor<T>* gx = t.grad_buf(xid))
      for (i64 i = 0; i < gx->size(); ++i) gx->data()[i] += g;
  });
}

template <typename T>
Value<T> mean_all(Value<T> x) {
  Tape<T>& tp = *x.tape;
  const i64 sz = tp.val(x).size();
  check(sz > 0, "mean_all: empty input");
  return affine(sum_all(x), T(1) / static_cast<T>(sz), T(0));
}

// Mean cross-entropy over rows of logits[n,k] against integer targets.
template <typename T>
Value<T> softmax_xent_rows(Value<T> logits, const std::vector<i64>& targets) {
  Tape<T>& tp = *logits.tape;
  const Tensor<T>& lv = tp.val(logits);
  check(lv.rank() == 2, "softmax_xent_rows: rank-2 logits required");
  const i64 n = lv.rows(), k = lv.cols();
  check(static_cast<i64>(targets.size()) == n, "softmax_xent_rows: target count mismatch");
  T total = T(0);
  for (i64 r = 0; r < n; ++r) {
    check(targets[r] >= 0 && targets[r] < k, "softmax_xent_rows: target out of range");
    T m = -std::numeric_limits<T>::infinity();
    for (i64 c = 0; c < k; ++c) m = std::max(m, lv.at(r, c));
    T denom = T(0);
    for (i64 c = 0; c < k; ++c) denom += std::exp(lv.at(r, c) - m);
    total += m + std::log(denom) - lv.at(r, targets[r]);
  }
  total /= static_cast<T>(n);
  const i64 lid = logits.id;
  Tensor<T> lsave = lv;
  std::vector<i64> tsave = targets;
  return tp.emit(Tensor<T>::scalar(total), tp.needs_grad(logits), [lid, lsave, tsave](Tape<T>& t, i64 id) {
    const T g = *t.grad_buf(id)->data();
    Tensor<T>* gl = t.grad_buf(lid);
    if (!gl) return;
    const i64 n = lsave.rows(), k = lsave.cols();
    const T inv_n = T(1) / static_cast<T>(n);
    for (i64 r = 0; r < n; ++r) {
      T m = -std::numeric_limits<T>::infinity();
      for (i64 c = 0; c < k; ++c) m = std::max(m, lsave.at(r, c));
      T denom = T(0);
      for (i64 c = 0; c < k; ++c) denom += std::exp(lsave.at(r, c) - m);
      for (i64 c = 0; c < k; ++c) {
        T p = std::exp(lsave.at(r, c) - m) / denom;
        if (c == tsave[r]) p -= T(1);
        gl->at(r, c) += g * inv_n * p;
      }
    }
  });
}

// Mean KL(r || q) over rows. r is fixed reference data on the probability
// simplex; gradients flow to q only. Zero entries of q are clamped to eps so
// a sparse estimate cannot produce an infinite loss, and r log r terms with
// r = 0 contribute zero.
template <typename T>
Value<T> kl_rows(const Tensor<T>& r, Value<T> q, T eps = T(1e-8)) {
  Tape<T>& tp = *q.tape;
  const Tensor<T>& qv = tp.val(q);
  check(qv.rank() == 2 && r.same_shape(qv), "kl_rows: shape mismatch");
  const i64 n = qv.rows(), k = qv.cols();
  T total = T(0);
  for (i64 rr = 0; rr < n; ++rr)
    for (i64 c = 0; c < k; ++c) {
      const T rv = r.at(rr, c);
      if (rv <= T(0)) continue;
      total += rv * (std::log(rv) - std::log(std::max(qv.at(rr, c), eps)));
    }
  total /= static_cast<T>(n);
  const i64 qid = q.id;
  Tensor<T> rsave = r, qsave = qv;
  return tp.emit(Tensor<T>::scalar(total), tp.needs_grad(q), [qid, rsave, qsave, eps](Tape<T>& t, i64 id) {
    const T g = *t.grad_buf(id)->data();
    Tensor<T>* gq = t.grad_buf(qid);
    if (!gq) return;
    const i64 n = qsave.rows(), k = qsave.cols();
    const T inv_n = T(1) / static_cast<T>(n);
    for (i64 rr = 0; rr < n; ++rr)
      for (i64 c = 0; c < k; ++c) {
        const T rv = rsave.at(rr, c);
        if (rv <= T(0)) continue;
        gq->at(rr, c) -= g * inv_n * rv / std::max(qsave.at(rr, c), eps);
      }
  });
}

// KL(r || q) for a single pair of distributions.
template <typename T>
Value<T> kl_divergence(const Tensor<T>& r, Value<T> q, T eps = T(1e-8)) {
  Tape<T>& tp = *q.tape;
  const Tensor<T>& qv = tp.val(q);
  check(r.rank() == 1 && qv.rank() == 1 && r.same_shape(qv), "kl_divergence: matching rank-1 inputs required");
  const i64 k = r.shape()[0];
  Tensor<T> r2 = Tensor<T>::zeros({1, k});
  std::copy(r.data(), r.data() + k, r2.data());
  // reshape q via a gather-free view: emit a rank-2 alias node
  const i64 qid = q.id;
  Tensor<T> q2v = Tensor<T>::zeros({1, k});
  std::copy(qv.data(), qv.data() + k, q2v.data());
  Value<T> q2 = tp.emit(std::move(q2v), tp.needs_grad(q), [qid, k](Tape<T>& t, i64 id) {
    const Tensor<T>& g = *t.grad_buf(id);
    if (Tensor<T>* gq = t.grad_buf(qid))
      for (i64 c = 0; c < k; ++c) gq->at(c) += g.at(0, c);
  });
  return kl_rows(r2, q2, eps);
}

// Mean binary cross-entropy from logits over every element, numerically
// stable form.
template <typename T>
Value<T> bce_logits(Value<T> z, const Tensor<T>& y) {
  Tape<T>& tp = *z.tape;
  const Tensor<T>& zv = tp.val(z);
  check(zv.same_shape(y), "bce_logits: shape mismatch");
  const i64 sz = zv.size();
  check(sz > 0, "bce_logits: empty input");
  T total = T(0);
  for (i64 i = 0; i < sz; ++i) {
    const T zi = zv.data()[i], yi = y.data()[i];
    total += std::max(zi, T(0)) - zi * yi + std::log1p(std::exp(-std::abs(zi)));
  }
  total /= static_cast<T>(sz);
  const i64 zid = z.id;
  Tensor<T> zsave = zv, ysave = y;
  return tp.emit(Tensor<T>::scalar(total), tp.needs_grad(z), [zid, zsave, ysave](Tape<T>& t, i64 id) {
    const T g = *t.grad_buf(id)->data();
    Tensor<T>* gz = t.grad_buf(zid);
    if (!gz) return;
    const T inv = T(1) / static_cast<T>(zsave.size());
    for (i64 i = 0; i < zsave.size(); ++i) {
      const T zi = zsave.data()[i];
      const T s = zi >= T(0) ? T(1) / (T(1) + std::exp(-zi)) : std::exp(zi) / (T(1) + std::exp(zi));
      gz->data()[i] += g * inv * (s - ysave.data()[i]);
    }
  });
}

template <typename T>
Value<T> mse_loss(Value<T> p, const Tensor<T>& target) {
  Tape<T>& tp = *p.tape;
  const Tensor<T>& pv = tp.val(p);
  check(pv.same_shape(target), "mse_loss: shape mismatch");
  const i64 sz = pv.size();
  check(sz > 0, "mse_loss: empty input");
  T total = T(0);
  for (i64 i = 0; i < sz; ++i) {
    const T d = pv.data()[i] - target.data()[i];
    total += d * d;
  }
  total /= static_cast<T>(sz);
  const i64 pid = p.id;
  Tensor<T> psave = pv, tsave = target;
  return tp.emit(Tensor<T>::scalar(total), tp.needs_grad(p), [pid, psave, tsave](Tape<T>& t, i64 id) {
    const T g = *t.grad_buf(id)->data();
    Tensor<T>* gp = t.grad_buf(pid);
    if (!gp) return;
    const T inv = T(2) / static_cast<T>(psave.size());
    for (i64 i = 0; i < psave.size(); ++i)
      gp->data()[i] += g * inv * (psave.data()[i] - tsave.data()[i]);
  });
}

}  // namespace ops

}  // namespace mepoi
