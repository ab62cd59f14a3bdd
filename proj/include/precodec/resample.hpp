#pragma once

#include "precodec/tensor.hpp"

namespace precodec {

// Input extents (in_h, in_w) resampled to output extents (out_h, out_w).
struct ScalePlan {
  Index in_h = 1, in_w = 1, out_h = 1, out_w = 1;

  double scale_h() const { return static_cast<double>(in_h) / static_cast<double>(out_h); }
  double scale_w() const { return static_cast<double>(in_w) / static_cast<double>(out_w); }
  void validate() const;
};

ScalePlan make_plan(Index in_h, Index in_w, Index out_h, Index out_w);
// Output extents round(in / scale), at least 1.
ScalePlan plan_for_scale(Index in_h, Index in_w, double scale);

// Pixel-center normalization to (-1,1): p(R,H) = -1 + (2R+1)/H.
double normalize_coord(Index r, Index extent);
// Inverse onto continuous input pixel positions: q(r,H) = (r+1)H/2 - 0.5.
double denormalize_coord(double r, Index extent);

// Normalized phase error between output row R's center and the nearest input
// row center (same for columns with the *_w variant).
double sampling_error_h(Index r, const ScalePlan& plan);
double sampling_error_w(Index c, const ScalePlan& plan);

// [1,H,W,2] normalized (r,c) of every output pixel center.
Tensor base_grid(const ScalePlan& plan);
// Same, snapped to the nearest input pixel center.
Tensor rounded_grid(const ScalePlan& plan);
// [1,2,H,W]: E(R) and E(C) per output pixel.
Tensor sampling_error_map(const ScalePlan& plan);

enum class Filter { kBicubic, kLanczos };

// Separable resampling of img[N,C,in_h,in_w] to [N,C,out_h,out_w] (Keys
// a=-0.5 or Lanczos a=3). Downscaling widens the kernel by the scale factor.
// Edge clamp at borders. Differentiable in img.
Tensor resize(const Tensor& img, const ScalePlan& plan, Filter filter);
inline Tensor bicubic_resize(const Tensor& img, const ScalePlan& plan) { return resize(img, plan, Filter::kBicubic); }
inline Tensor lanczos_resize(const Tensor& img, const ScalePlan& plan) { return resize(img, plan, Filter::kLanczos); }
// Resizes to explicit output extents.
Tensor resize_to(const Tensor& img, Index out_h, Index out_w, Filter filter);

double keys_kernel(double x);
double keys_kernel_derivative(double x);
double lanczos_kernel(double x);

// Bicubic 4x4 interpolation of features[N,C,Hi,Wi] at coords[N,H,W,2]
// (normalized r,c); out[N,C,H,W]. Differentiable in features and coords.
Tensor grid_sample_bicubic(const Tensor& features, const Tensor& coords);

// Base query plus weighted compensation taps:
// out = gs(F, base) + sum_k weights[:,k] * gs(F, base + offsets[:,k]).
// offsets[N,K,H,W,2] (normalized units), weights[N,K,C,H,W].
Tensor deformable_compensated_sample(const Tensor& features, const Tensor& base_coords, const Tensor& offsets,
                                     const Tensor& weights);

// Backward warp of x[N,C,H,W] by a per-pixel motion field flow[N,2,H,W] in
// pixels: out(p) = x(p - flow(p)), bilinear with edge clamp. Differentiable
// in x only; the field is treated as data.
Tensor warp_bilinear(const Tensor& x, const Tensor& flow);

}  // namespace precodec
