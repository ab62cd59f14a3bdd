#pragma once

#include <cstdint>

#include "precodec/entropy.hpp"
#include "precodec/params.hpp"
#include "precodec/resample.hpp"

namespace precodec {

struct RarnConfig {
  Index feature_channels = 32;
  Index num_resblocks = 3;
  Index taps = 4;  // compensation taps K
  Index rate_latent_channels = 8;
  int window = 8;
  int heads = 2;
  Index mlp_hidden = 576;
  Index mlp_layers = 4;
  bool lightweight = false;
  // Query at the nearest input center instead of the continuous projection.
  bool round_query = false;

  void validate() const;
};

struct RarnOutput {
  Tensor y;          // [1,3,H,W] in [0,1]
  Tensor rate_bits;  // R_f, single element
  Tensor rate_map;   // [1,rate_latent,ceil(H_in/4),ceil(W_in/4)]
  Tensor latent;     // quantized rate latent
  Tensor features;   // attention-enhanced features at input resolution
};

ParamSet init_rarn(const RarnConfig& config, std::uint64_t seed);
// Reconstructs the architecture from parameter names and shapes; raises
// ModelError when the set is not a RARN.
RarnConfig infer_rarn_config(const ParamSet& params);
// Raises ModelError when params do not match the config.
void check_rarn_params(const RarnConfig& config, const ParamSet& params);

struct RateFeatures {
  Tensor rate_map;
  Tensor bits;
  Tensor latent;
};
RateFeatures estimate_rate_features(const Tensor& x, const ParamSet& params, const Quantizer& quant);

RarnOutput precode(const Tensor& x, const ScalePlan& plan, const ParamSet& params, const RarnConfig& config,
                   const Quantizer& quant = {});

// Plain bicubic precode used as the baseline.
Tensor bicubic_precode(const Tensor& x, const ScalePlan& plan);

}  // namespace precodec
