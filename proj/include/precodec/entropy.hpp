#pragma once

#include <cstdint>

#include "precodec/random.hpp"
#include "precodec/tensor.hpp"

namespace precodec {

// Train: additive U(-0.5, 0.5) noise drawn from `rng`. Eval: rounding.
struct Quantizer {
  bool train = false;
  Rng* rng = nullptr;

  Tensor apply(const Tensor& z) const;
};

// Round half away from zero with an identity gradient.
Tensor round_st(const Tensor& x);

// Probability floor that keeps code lengths finite.
inline constexpr double kMinProbability = 1e-9;

// Discretized zero-mean logistic: P(n) = sigma((n+0.5)/s) - sigma((n-0.5)/s).
double logistic_pmf(double n, double scale);

// Code length in bits of z[N,C,H,W] under a per-channel logistic prior with
// scale exp(log_scale[C]). Differentiable in both arguments.
Tensor logistic_bits(const Tensor& z, const Tensor& log_scale);

}  // namespace precodec
