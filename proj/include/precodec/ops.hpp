#pragma once

#include <memory>
#include <vector>

#include "precodec/tensor.hpp"

// Differentiable tensor operations. Broadcasting is limited to per-channel
// bias addition and tensors of a single element ("scalar" operands).
namespace precodec {

// Elementwise. `b` must match `a` in shape or hold a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);
Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
// Clamps values; the backward pass is the identity (straight-through).
Tensor clamp_st(const Tensor& x, double lo, double hi);
// Plain clamp whose gradient is zero outside [lo, hi].
Tensor clamp(const Tensor& x, double lo, double hi);
// Round half away from zero. Not differentiable (records nothing).
Tensor round_values(const Tensor& x);

// Reductions to a single-element tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, std::size_t axis);

// a[M,K] @ b[K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);
// a[B,M,K] @ b[B,K,N] -> [B,M,N]; with transpose_b, b is [B,N,K].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
// x[..., in] @ weight[out,in]^T + bias[out] -> [..., out]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// input[N,C,H,W], weight[O,C,kh,kw], bias[O] (may be undefined).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 1, int pad = 0);
// x[N,C,...] + bias[C].
Tensor bias_add(const Tensor& x, const Tensor& bias);

// Gathers out[i] = x[index[i]]; index -1 produces zero. The backward pass
// scatter-adds, so repeated indices are allowed.
using IndexMap = std::shared_ptr<const std::vector<Index>>;
Tensor take(const Tensor& x, IndexMap index, Shape out_shape);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, Index start, Index length);

// Spatial ops on [N,C,H,W].
Tensor pixel_unshuffle(const Tensor& x, int factor);
Tensor pixel_shuffle(const Tensor& x, int factor);
// Cyclic roll: out[h][w] = x[(h - shift_h) mod H][(w - shift_w) mod W].
Tensor roll(const Tensor& x, Index shift_h, Index shift_w);
Tensor pad_replicate(const Tensor& x, Index top, Index bottom, Index left, Index right);
Tensor crop(const Tensor& x, Index top, Index left, Index height, Index width);
Tensor upsample_nearest(const Tensor& x, int factor);
Tensor avg_pool(const Tensor& x, int factor);

// Extents rounded up to a multiple of `m`.
Index round_up(Index v, Index m);
// Replicate-pads H and W (bottom/right) up to multiples of `m`.
Tensor pad_to_multiple(const Tensor& x, Index m);

}  // namespace precodec
