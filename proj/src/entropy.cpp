#include "precodec/entropy.hpp"

#include <cmath>

#include "precodec/ops.hpp"

namespace precodec {

Tensor round_st(const Tensor& x) {
  std::vector<double> v = x.to_vector();
  for (double& e : v) e = std::round(e);
  return make_result(x.shape(), std::move(v), {x}, [](std::span<const double> g, GradSink& sink) {
    auto gx = sink[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
}

Tensor Quantizer::apply(const Tensor& z) const {
  if (!train) return round_st(z);
  if (rng == nullptr) throw InvalidArgument("training quantizer needs a noise generator");
  std::vector<double> noise(static_cast<std::size_t>(z.numel()));
  for (double& e : noise) e = rng->uniform() - 0.5;
  return add(z, Tensor::from(z.shape(), std::move(noise)));
}

namespace {

double sigmoid_of(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// P(|z|) using the upper tail so the subtraction never cancels two values
// close to 1.
double tail_pmf(double z, double s) {
  const double a = (std::abs(z) - 0.5) / s, b = (std::abs(z) + 0.5) / s;
  return sigmoid_of(-a) - sigmoid_of(-b);
}

double dsigmoid(double x) {
  const double s = sigmoid_of(x);
  return s * sigmoid_of(-x);
}

}  // namespace

double logistic_pmf(double n, double scale) { return tail_pmf(n, scale); }

Tensor logistic_bits(const Tensor& z, const Tensor& log_scale) {
  if (z.rank() < 2 || log_scale.rank() != 1 || log_scale.dim(0) != z.dim(1))
    throw InvalidShape("logistic_bits: z " + shape_str(z.shape()) + " vs log_scale " + shape_str(log_scale.shape()));
  const Index n = z.dim(0), c = z.dim(1), inner = z.numel() / (n * c);
  auto zd = z.data();
  auto ld = log_scale.data();
  double bits = 0.0;
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      const double s = std::exp(ld[ch]);
      for (Index i = 0; i < inner; ++i) bits -= std::log2(std::max(tail_pmf(zd[(b * c + ch) * inner + i], s), kMinProbability));
    }
  return make_result({1}, {bits}, {z, log_scale}, [z, log_scale, n, c, inner](std::span<const double> g, GradSink& sink) {
    auto gz = sink[0];
    auto gl = sink[1];
    auto zd2 = z.data();
    auto ld2 = log_scale.data();
    for (Index b = 0; b < n; ++b)
      for (Index ch = 0; ch < c; ++ch) {
        const double s = std::exp(ld2[ch]);
        for (Index i = 0; i < inner; ++i) {
          const Index at = (b * c + ch) * inner + i;
          const double zv = zd2[at];
          const double p = tail_pmf(zv, s);
          if (p < kMinProbability) continue;  // floored: constant code length
          const double u = (zv + 0.5) / s, l = (zv - 0.5) / s;
          const double du = dsigmoid(u), dl = dsigmoid(l);
          const double coef = -g[0] / (p * std::log(2.0));
          if (!gz.empty()) gz[static_cast<std::size_t>(at)] += coef * (du - dl) / s;
          if (!gl.empty()) gl[static_cast<std::size_t>(ch)] += coef * -(u * du - l * dl);
        }
      }
  });
}

}  // namespace precodec
