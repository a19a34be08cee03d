#pragma once

#include <cmath>

#include "mepoi/rng.hpp"
#include "mepoi/tensor.hpp"

namespace mepoi {

template <typename T>
Tensor<T> xavier_uniform(i64 rows, i64 cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor<T> t = Tensor<T>::zeros({rows, cols});
  for (i64 i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

template <typename T>
Tensor<T> gaussian_init(i64 rows, i64 cols, double stddev, Rng& rng) {
  Tensor<T> t = Tensor<T>::zeros({rows, cols});
  for (i64 i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace mepoi
