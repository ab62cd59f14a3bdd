#pragma once

#include <vector>

#include "precodec/tensor.hpp"

namespace precodec {

// Multi-head self-attention weights. Projections map C_in input channels to
// D = heads * head_dim attention channels and back to C_out.
struct AttentionWeights {
  Tensor qkv_weight;   // [3*D, C_in]
  Tensor qkv_bias;     // [3*D]
  Tensor proj_weight;  // [C_out, D]
  Tensor proj_bias;    // [C_out]
  Tensor rel_bias;     // [heads, (2k-1)^2]; undefined disables the bias
  int heads = 2;
};

// Self-attention inside non-overlapping k x k windows of x[N,C,H,W] after a
// cyclic shift of (shift, shift). Positions wrapped around the border by the
// shift are masked from each other. The shift is undone on the output.
Tensor windowed_attention(const Tensor& x, int window, int shift, const AttentionWeights& w);

// Attention across all positions of x[N,C,H,W] (no position bias).
Tensor global_attention(const Tensor& x, const AttentionWeights& w);

// For every pixel (row-major) of an H x W map, the pixels it may attend to in
// one windowed-attention layer with the given shift.
std::vector<std::vector<Index>> attention_reach(Index height, Index width, int window, int shift);

}  // namespace precodec
