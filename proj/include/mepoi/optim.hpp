#pragma once

#include <memory>
#include <unordered_map>

#include "mepoi/tape.hpp"

namespace mepoi {

// Owns parameters with stable addresses and insertion-ordered iteration.
template <typename T>
class ParamStore {
 public:
  Param<T>& add(const std::string& name, Tensor<T> init) {
    check(index_.find(name) == index_.end(), "ParamStore: duplicate parameter '" + name + "'");
    auto p = std::make_unique<Param<T>>();
    p->name = name;
    p->value = std::move(init);
    p->grad = Tensor<T>::zeros(p->value.shape());
    items_.push_back(std::move(p));
    index_[name] = items_.size() - 1;
    return *items_.back();
  }

  Param<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].get();
  }

  std::size_t size() const { return items_.size(); }
  Param<T>& at(std::size_t i) { return *items_[i]; }
  const Param<T>& at(std::size_t i) const { return *items_[i]; }

  void zero_grad() {
    for (auto& p : items_) p->grad = Tensor<T>::zeros(p->value.shape());
  }

  i64 total_size() const {
    i64 n = 0;
    for (const auto& p : items_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Param<T>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW style) when > 0
};

// Adam with bias correction; weight decay, when set, is applied decoupled
// from the moment estimates.
template <typename T>
class Adam {
 public:
  Adam(ParamStore<T>& store, AdamConfig cfg) : store_(&store), cfg_(cfg) {
    m_.resize(store.size());
    v_.resize(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
      m_[i] = Tensor<T>::zeros(store.at(i).value.shape());
      v_[i] = Tensor<T>::zeros(store.at(i).value.shape());
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < store_->size(); ++i) {
      Param<T>& p = store_->at(i);
      check(p.grad.defined() && p.grad.same_shape(p.value), "Adam: missing gradient for '" + p.name + "'");
      if (!all_finite(p.grad))
        throw std::runtime_error("Adam: non-finite gradient in parameter '" + p.name + "'");
      T* w = p.value.data();
      const T* g = p.grad.data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      for (i64 j = 0; j < p.value.size(); ++j) {
        m[j] = static_cast<T>(cfg_.beta1) * m[j] + static_cast<T>(1.0 - cfg_.beta1) * g[j];
        v[j] = static_cast<T>(cfg_.beta2) * v[j] + static_cast<T>(1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = static_cast<double>(m[j]) / bc1;
        const double vhat = static_cast<double>(v[j]) / bc2;
        double upd = cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        if (cfg_.weight_decay > 0.0) upd += cfg_.lr * cfg_.weight_decay * static_cast<double>(w[j]);
        w[j] -= static_cast<T>(upd);
      }
    }
  }

  i64 step_count() const { return t_; }
  void set_step_count(i64 t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }
  Tensor<T>& moment1(std::size_t i) { return m_[i]; }
  Tensor<T>& moment2(std::size_t i) { return v_[i]; }

 private:
  ParamStore<T>* store_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  i64 t_ = 0;
};

template <typename T>
double global_grad_norm(ParamStore<T>& store) {
  double s = 0.0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Tensor<T>& g = store.at(i).grad;
    for (i64 j = 0; j < g.size(); ++j) {
      const double x = static_cast<double>(g.data()[j]);
      s += x * x;
    }
  }
  return std::sqrt(s);
}

// Scales all gradients so the global L2 norm is at most max_norm.
template <typename T>
double clip_global_norm(ParamStore<T>& store, double max_norm) {
  const double norm = global_grad_norm(store);
  if (norm > max_norm && norm > 0.0) {
    const T f = static_cast<T>(max_norm / norm);
    for (std::size_t i = 0; i < store.size(); ++i) {
      Tensor<T>& g = store.at(i).grad;
      for (i64 j = 0; j < g.size(); ++j) g.data()[j] *= f;
    }
  }
  return norm;
}

}  // namespace mepoi
