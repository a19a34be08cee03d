#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <numeric>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "mepoi/common.hpp"
#include "mepoi/parallel.hpp"

namespace mepoi {

// Dense row-major tensor of rank 0..2. Storage is shared on copy; by
// convention a tensor is only written through data() by its creator, before
// it gets handed to anyone else.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<i64> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<i64> shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data(), t.data() + t.size(), v);
    return t;
  }

  static Tensor from(std::vector<i64> shape, std::vector<T> values) {
    Tensor t(std::move(shape));
    check(static_cast<i64>(values.size()) == t.size(), "Tensor::from: value count does not match shape");
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  static Tensor scalar(T v) { return from({}, {v}); }

  bool defined() const { return static_cast<bool>(data_); }
  const std::vector<i64>& shape() const { return shape_; }
  i64 size() const { return size_; }
  int rank() const { return static_cast<int>(shape_.size()); }

  i64 rows() const {
    check(rank() == 2, "Tensor::rows: rank-2 tensor required");
    return shape_[0];
  }
  i64 cols() const {
    check(rank() == 2, "Tensor::cols: rank-2 tensor required");
    return shape_[1];
  }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }

  T at(i64 i) const { return (*data_)[static_cast<std::size_t>(i)]; }
  T at(i64 r, i64 c) const { return (*data_)[static_cast<std::size_t>(r * shape_[1] + c)]; }
  T& at(i64 i) { return (*data_)[static_cast<std::size_t>(i)]; }
  T& at(i64 r, i64 c) { return (*data_)[static_cast<std::size_t>(r * shape_[1] + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor clone() const {
    Tensor t(shape_);
    std::copy(data(), data() + size(), t.data());
    return t;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << "]";
    return os.str();
  }

 private:
  explicit Tensor(std::vector<i64> shape) : shape_(std::move(shape)) {
    size_ = 1;
    for (i64 d : shape_) {
      check(d >= 0, "Tensor: negative dimension");
      size_ *= d;
    }
    data_ = std::make_shared<std::vector<T>>(static_cast<std::size_t>(size_), T(0));
  }

  std::vector<i64> shape_;
  i64 size_ = 0;
  std::shared_ptr<std::vector<T>> data_;
};

namespace detail {
template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;
}  // namespace detail

// out (+)= a[m,k] * b[k,n]. Row blocks of the output go to separate workers;
// every output element is produced by exactly one Eigen call, so the result
// does not depend on a racing reduction.
template <typename T>
void gemm_nn(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out, bool accumulate) {
  const i64 m = a.rows(), k = a.cols(), n = b.cols();
  check(b.rows() == k, "gemm_nn: inner dimensions disagree " + a.shape_str() + " * " + b.shape_str());
  check(out.rows() == m && out.cols() == n, "gemm_nn: bad output shape");
  detail::ECMap<T> A(a.data(), m, k), B(b.data(), k, n);
  detail::EMap<T> C(out.data(), m, n);
  parallel_for(m, [&](i64 lo, i64 hi) {
    if (accumulate)
      C.middleRows(lo, hi - lo).noalias() += A.middleRows(lo, hi - lo) * B;
    else
      C.middleRows(lo, hi - lo).noalias() = A.middleRows(lo, hi - lo) * B;
  });
}

// out (+)= a[m,k] * b[n,k]^T.
template <typename T>
void gemm_nt(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out, bool accumulate) {
  const i64 m = a.rows(), k = a.cols(), n = b.rows();
  check(b.cols() == k, "gemm_nt: inner dimensions disagree " + a.shape_str() + " * " + b.shape_str() + "^T");
  check(out.rows() == m && out.cols() == n, "gemm_nt: bad output shape");
  detail::ECMap<T> A(a.data(), m, k), B(b.data(), n, k);
  detail::EMap<T> C(out.data(), m, n);
  parallel_for(m, [&](i64 lo, i64 hi) {
    if (accumulate)
      C.middleRows(lo, hi - lo).noalias() += A.middleRows(lo, hi - lo) * B.transpose();
    else
      C.middleRows(lo, hi - lo).noalias() = A.middleRows(lo, hi - lo) * B.transpose();
  });
}

// out (+)= a[m,k]^T * b[m,n].
template <typename T>
void gemm_tn(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out, bool accumulate) {
  const i64 m = a.rows(), k = a.cols(), n = b.cols();
  check(b.rows() == m, "gemm_tn: inner dimensions disagree " + a.shape_str() + "^T * " + b.shape_str());
  check(out.rows() == k && out.cols() == n, "gemm_tn: bad output shape");
  detail::ECMap<T> A(a.data(), m, k), B(b.data(), m, n);
  detail::EMap<T> C(out.data(), k, n);
  parallel_for(k, [&](i64 lo, i64 hi) {
    if (accumulate)
      C.middleRows(lo, hi - lo).noalias() += A.middleCols(lo, hi - lo).transpose() * B;
    else
      C.middleRows(lo, hi - lo).noalias() = A.middleCols(lo, hi - lo).transpose() * B;
  });
}

template <typename T>
Tensor<T> matmul_plain(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = Tensor<T>::zeros({a.rows(), b.cols()});
  gemm_nn(a, b, out, false);
  return out;
}

template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
  check(dst.same_shape(src), "add_inplace: shape mismatch");
  T* d = dst.data();
  const T* s = src.data();
  for (i64 i = 0; i < dst.size(); ++i) d[i] += s[i];
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  const T* p = t.data();
  for (i64 i = 0; i < t.size(); ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

}  // namespace mepoi
