#include "precodec/nn.hpp"

#include "precodec/ops.hpp"

namespace precodec::nn {

void add_conv(ParamSet& p, Rng& rng, const std::string& name, Index out_c, Index in_c, Index k, bool zero, double gain) {
  p.add(name + ".weight", zero ? Tensor::zeros({out_c, in_c, k, k}) : init_conv(rng, out_c, in_c, k, k, gain));
  p.add(name + ".bias", Tensor::zeros({out_c}));
}

Tensor conv(const ParamSet& p, const std::string& name, const Tensor& x, int stride) {
  const Tensor& w = p.at(name + ".weight");
  return conv2d(x, w, p.at(name + ".bias"), stride, static_cast<int>(w.dim(2) / 2));
}

void add_attention(ParamSet& p, Rng& rng, const std::string& prefix, Index c_in, Index dim, Index c_out, int window,
                   int heads, bool zero_proj) {
  p.add(prefix + ".qkv.weight", init_linear(rng, 3 * dim, c_in, 0.5));
  p.add(prefix + ".qkv.bias", Tensor::zeros({3 * dim}));
  p.add(prefix + ".proj.weight", zero_proj ? Tensor::zeros({c_out, dim}) : init_linear(rng, c_out, dim, 0.5));
  p.add(prefix + ".proj.bias", Tensor::zeros({c_out}));
  if (window > 0) p.add(prefix + ".rel_bias", init_normal(rng, {heads, (2 * window - 1) * (2 * window - 1)}, 0.02));
}

AttentionWeights attention(const ParamSet& p, const std::string& prefix, int heads) {
  AttentionWeights w;
  w.qkv_weight = p.at(prefix + ".qkv.weight");
  w.qkv_bias = p.at(prefix + ".qkv.bias");
  w.proj_weight = p.at(prefix + ".proj.weight");
  w.proj_bias = p.at(prefix + ".proj.bias");
  if (p.contains(prefix + ".rel_bias")) w.rel_bias = p.at(prefix + ".rel_bias");
  w.heads = heads;
  return w;
}

int heads_for(Index channels, int requested) {
  int h = std::max(1, requested);
  while (h > 1 && channels % h != 0) --h;
  return h;
}

}  // namespace precodec::nn
