#pragma once

#include <vector>

#include "lpv/rng.hpp"
#include "lpv/tensor.hpp"

namespace lpv_test {

using lpv::Real;
using lpv::Shape;
using lpv::Tensor;

inline Tensor random_tensor(Shape shape, lpv::Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::vector<Real> data(lpv::shape_numel(shape));
  for (auto& v : data) v = static_cast<Real>(rng.uniform(lo, hi));
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Plain triple loop, summing p in increasing order.
inline std::vector<Real> reference_matmul(const std::vector<Real>& a, const std::vector<Real>& b, std::size_t m,
                                          std::size_t k, std::size_t n) {
  std::vector<Real> c(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
  return c;
}

// Parallel mask by enumeration of (pixel i, pixel j, character k) triples, followed by
// the release rule for tokens whose whole row would be masked.
inline std::vector<Real> brute_force_mask(const std::vector<Real>& a, std::size_t t, std::size_t p, Real threshold) {
  std::vector<int> masked(p * p, 0);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t k = 0; k < t; ++k)
        if (a[k * p + i] >= threshold && a[k * p + j] >= threshold) masked[i * p + j] = 1;
  std::vector<int> full(p, 1);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j)
      if (!masked[i * p + j]) full[i] = 0;
  std::vector<Real> out(p * p, 0);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j)
      if (masked[i * p + j] && !full[i] && !full[j]) out[i * p + j] = lpv::kMaskedValue;
  return out;
}

}  // namespace lpv_test
