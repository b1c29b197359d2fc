#pragma once

#include <cmath>
#include <cstring>

#include "siam/rng.hpp"
#include "siam/tensor.hpp"

namespace siam::testing {

template <typename Scalar = double>
Tensor<Scalar> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<Scalar> t(std::move(shape));
  Scalar* p = t.mutable_data();
  for (Index i = 0; i < t.size(); ++i) p[i] = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

template <typename Scalar>
double max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  if (a.size() == 0) return 0.0;
  return static_cast<double>((a.array() - b.array()).abs().maxCoeff());
}

template <typename Scalar>
bool bitwise_equal(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) return false;
  for (Index i = 0; i < a.size(); ++i) {
    const Scalar x = a[i];
    const Scalar y = b[i];
    if (std::memcmp(&x, &y, sizeof(Scalar)) != 0) return false;
  }
  return true;
}

}  // namespace siam::testing
