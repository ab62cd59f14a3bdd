#pragma once

#include <string>

#include "precodec/attention.hpp"
#include "precodec/params.hpp"

// Named-parameter layer helpers shared by the two models.
namespace precodec::nn {

void add_conv(ParamSet& p, Rng& rng, const std::string& name, Index out_c, Index in_c, Index k, bool zero = false,
              double gain = 1.0);
// Same-padding convolution using `name.weight` / `name.bias`.
Tensor conv(const ParamSet& p, const std::string& name, const Tensor& x, int stride = 1);

// Attention block parameters under `prefix`: qkv, proj and (window > 0) a
// relative-position table. `zero_proj` zero-initializes the output projection.
void add_attention(ParamSet& p, Rng& rng, const std::string& prefix, Index c_in, Index dim, Index c_out, int window,
                   int heads, bool zero_proj);
AttentionWeights attention(const ParamSet& p, const std::string& prefix, int heads);

int heads_for(Index channels, int requested);

}  // namespace precodec::nn
