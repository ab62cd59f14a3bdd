#include "precodec/rarn.hpp"

#include <cmath>

#include "precodec/attention.hpp"
#include "precodec/nn.hpp"
#include "precodec/ops.hpp"

namespace precodec {

void RarnConfig::validate() const {
  if (taps < 1) throw ConfigError("rarn: taps must be >= 1");
  if (feature_channels < 4) throw ConfigError("rarn: feature_channels must be >= 4");
  if (num_resblocks < 0 || rate_latent_channels < 1 || mlp_hidden < 1 || mlp_layers < 1)
    throw ConfigError("rarn: layer counts must be positive");
  if (window < 2 || window % 2 != 0) throw ConfigError("rarn: window must be even and >= 2");
  if (heads < 1 || feature_channels % heads != 0) throw ConfigError("rarn: heads must divide feature_channels");
}

namespace {

std::string res_name(Index i, int conv) { return "res" + std::to_string(i) + ".conv" + std::to_string(conv); }
std::string attn_name(int j) { return "attn" + std::to_string(j); }
std::string mlp_name(Index l) { return "mlp" + std::to_string(l); }

}  // namespace

ParamSet init_rarn(const RarnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamSet p;
  const Index c = cfg.feature_channels, r = cfg.rate_latent_channels;
  nn::add_conv(p, rng, "head", c, 3, 3);
  for (Index i = 0; i < cfg.num_resblocks; ++i) {
    nn::add_conv(p, rng, res_name(i, 1), c, c, 3);
    nn::add_conv(p, rng, res_name(i, 2), c, c, 3, /*zero=*/true);
  }
  nn::add_conv(p, rng, "rate.enc1", c, 3, 3);
  nn::add_conv(p, rng, "rate.enc2", r, c, 3, false, 2.0);
  p.add("rate.log_scale", Tensor::zeros({r}));
  nn::add_conv(p, rng, "rate.dec1", c, r, 3);
  nn::add_conv(p, rng, "rate.dec2", r, c, 3);
  for (int j = 0; j < 2; ++j) {
    nn::add_conv(p, rng, attn_name(j) + ".fuse", c, c + r, 1);
    nn::add_attention(p, rng, attn_name(j), c, c, c, cfg.window, cfg.heads, /*zero_proj=*/true);
  }
  if (!cfg.lightweight) {
    Index in = c + 4;
    for (Index l = 0; l < cfg.mlp_layers; ++l) {
      nn::add_conv(p, rng, mlp_name(l), cfg.mlp_hidden, in, 1);
      in = cfg.mlp_hidden;
    }
    nn::add_conv(p, rng, "mlp.offset", 2 * cfg.taps, in, 1, true);
    nn::add_conv(p, rng, "mlp.weight", cfg.taps * c, in, 1, true);
  }
  nn::add_conv(p, rng, "out", 3, c, 1, true);
  return p;
}

RarnConfig infer_rarn_config(const ParamSet& p) {
  RarnConfig cfg;
  try {
    cfg.feature_channels = p.at("head.weight").dim(0);
    cfg.num_resblocks = 0;
    while (p.contains(res_name(cfg.num_resblocks, 1) + ".weight")) ++cfg.num_resblocks;
    cfg.rate_latent_channels = p.at("rate.log_scale").dim(0);
    const Tensor& rb = p.at("attn0.rel_bias");
    cfg.heads = static_cast<int>(rb.dim(0));
    const auto side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(rb.dim(1)))));
    cfg.window = (side + 1) / 2;
    cfg.lightweight = !p.contains("mlp.offset.weight");
    if (!cfg.lightweight) {
      cfg.taps = p.at("mlp.offset.weight").dim(0) / 2;
      cfg.mlp_layers = 0;
      while (p.contains(mlp_name(cfg.mlp_layers) + ".weight")) ++cfg.mlp_layers;
      cfg.mlp_hidden = p.at("mlp0.weight").dim(0);
    }
  } catch (const ModelError& e) {
    throw ModelError(std::string("not a rarn checkpoint: ") + e.what());
  }
  check_rarn_params(cfg, p);
  return cfg;
}

void check_rarn_params(const RarnConfig& cfg, const ParamSet& params) {
  cfg.validate();
  const ParamSet ref = init_rarn(cfg, 0);
  if (ref.size() != params.size()) throw ModelError("rarn checkpoint has " + std::to_string(params.size()) +
                                                    " tensors, config expects " + std::to_string(ref.size()));
  for (const auto& [name, t] : ref.items()) {
    if (!params.contains(name)) throw ModelError("rarn checkpoint lacks " + name);
    if (params.at(name).shape() != t.shape())
      throw ModelError("rarn tensor " + name + " has shape " + shape_str(params.at(name).shape()) + ", expected " +
                       shape_str(t.shape()));
  }
}

RateFeatures estimate_rate_features(const Tensor& x, const ParamSet& p, const Quantizer& quant) {
  Tensor xp = pad_to_multiple(x, 4);
  Tensor e1 = leaky_relu(nn::conv(p, "rate.enc1", xp, 2));
  Tensor z = nn::conv(p, "rate.enc2", e1, 2);
  Tensor zq = quant.apply(z);
  Tensor bits = logistic_bits(zq, p.at("rate.log_scale"));
  Tensor map = nn::conv(p, "rate.dec2", leaky_relu(nn::conv(p, "rate.dec1", zq)));
  return {map, bits, zq};
}

Tensor bicubic_precode(const Tensor& x, const ScalePlan& plan) { return clamp_st(bicubic_resize(x, plan), 0.0, 1.0); }

RarnOutput precode(const Tensor& x, const ScalePlan& plan, const ParamSet& p, const RarnConfig& cfg,
                   const Quantizer& quant) {
  if (x.rank() != 4 || x.dim(0) != 1 || x.dim(1) != 3)
    throw InvalidShape("precode expects [1,3,H,W], got " + shape_str(x.shape()));
  if (x.dim(2) != plan.in_h || x.dim(3) != plan.in_w)
    throw InvalidShape("precode input " + shape_str(x.shape()) + " does not match the scale plan");
  plan.validate();
  const Index h = x.dim(2), w = x.dim(3), c = cfg.feature_channels;

  Tensor f = leaky_relu(nn::conv(p, "head", x));
  for (Index i = 0; i < cfg.num_resblocks; ++i)
    f = add(f, nn::conv(p, res_name(i, 2), leaky_relu(nn::conv(p, res_name(i, 1), f))));

  RateFeatures rate = estimate_rate_features(x, p, quant);
  Tensor rate_up = crop(upsample_nearest(rate.rate_map, 4), 0, 0, h, w);

  for (int j = 0; j < 2; ++j) {
    const int shift = j % 2 == 0 ? 0 : cfg.window / 2;
    Tensor a = nn::conv(p, attn_name(j) + ".fuse", concat({f, rate_up}, 1));
    Tensor o = windowed_attention(pad_to_multiple(a, cfg.window), cfg.window, shift, nn::attention(p, attn_name(j), cfg.heads));
    f = add(f, crop(o, 0, 0, h, w));
  }

  const Tensor base = cfg.round_query ? rounded_grid(plan) : base_grid(plan);
  Tensor q = grid_sample_bicubic(f, base);
  Tensor sampled = q;
  const Index ho = plan.out_h, wo = plan.out_w;
  if (!cfg.lightweight) {
    // Per-pixel side information: phase error in input pixels and the scale.
    Tensor err = sampling_error_map(plan);
    std::vector<double> side(static_cast<std::size_t>(4 * ho * wo));
    auto ev = err.data();
    for (Index i = 0; i < ho * wo; ++i) {
      side[static_cast<std::size_t>(i)] = ev[i] * static_cast<double>(plan.in_h) / 2.0;
      side[static_cast<std::size_t>(ho * wo + i)] = ev[ho * wo + i] * static_cast<double>(plan.in_w) / 2.0;
      side[static_cast<std::size_t>(2 * ho * wo + i)] = plan.scale_h();
      side[static_cast<std::size_t>(3 * ho * wo + i)] = plan.scale_w();
    }
    Tensor hdn = concat({q, Tensor::from({1, 4, ho, wo}, std::move(side))}, 1);
    for (Index l = 0; l < cfg.mlp_layers; ++l) hdn = leaky_relu(nn::conv(p, mlp_name(l), hdn));
    const Index k = cfg.taps;
    // tanh-bounded offsets, at most two input pixels per axis.
    Tensor off = tanh(reshape(nn::conv(p, "mlp.offset", hdn), {1, k, 2, ho, wo}));
    std::vector<double> bound(static_cast<std::size_t>(k * 2 * ho * wo));
    for (Index t = 0; t < k; ++t)
      for (Index a = 0; a < 2; ++a)
        std::fill_n(bound.begin() + (t * 2 + a) * ho * wo, ho * wo, 4.0 / static_cast<double>(a == 0 ? plan.in_h : plan.in_w));
    off = permute(mul(off, Tensor::from({1, k, 2, ho, wo}, std::move(bound))), {0, 1, 3, 4, 2});
    Tensor wts = reshape(nn::conv(p, "mlp.weight", hdn), {1, k, c, ho, wo});
    sampled = deformable_compensated_sample(f, base, off, wts);
  }
  Tensor y = clamp_st(add(bicubic_resize(x, plan), nn::conv(p, "out", sampled)), 0.0, 1.0);
  return {y, rate.bits, rate.rate_map, rate.latent, f};
}

}  // namespace precodec
