#pragma once

#include <cmath>
#include <vector>

#include "precodec/params.hpp"
#include "precodec/random.hpp"
#include "precodec/tensor.hpp"

namespace testutil {

using precodec::Index;
using precodec::Shape;
using precodec::Tensor;

inline Tensor random_tensor(precodec::Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const Index n = precodec::numel_of(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) m = std::max(m, std::abs(ad[i] - bd[i]));
  return m;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
