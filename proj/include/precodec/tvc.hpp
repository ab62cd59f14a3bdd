#pragma once

#include <cstdint>
#include <vector>

#include "precodec/entropy.hpp"
#include "precodec/imageio.hpp"
#include "precodec/params.hpp"

namespace precodec {

struct TvcConfig {
  enum class Init { kRandom, kIdentity };

  int window = 8;
  Index num_coupling_blocks = 4;
  Index num_pre_attention_blocks = 3;
  Index gop = 3;
  double quant_step = 1.0 / 16.0;  // initial value of the learned step
  Index latent_channels = 16;
  int heads = 2;
  int pool = 4;              // downsampling of the global attention
  double inter_gain = 2.0;   // residual scaling at identity init
  bool residual = true;      // false drops the inter residual path
  Init init = Init::kRandom;

  void validate() const;
};

ParamSet init_tvc(const TvcConfig& config, std::uint64_t seed);
void check_tvc_params(const TvcConfig& config, const ParamSet& params);

// One affine coupling: h2' = h2 * exp(clamp(s(h1), -2, 2)) + t(h1).
// `prefix` names the block ("inn0", ...). `log_det`, when given, receives
// sum(clamped s).
Tensor coupling_forward(const Tensor& h, const ParamSet& p, const std::string& prefix, int window, int shift, int heads,
                        Tensor* log_det = nullptr);
Tensor coupling_inverse(const Tensor& h, const ParamSet& p, const std::string& prefix, int window, int shift, int heads);

// The stack of coupling blocks with alternating shift and half roles.
Tensor inn_forward(const Tensor& h, const ParamSet& p, const TvcConfig& cfg);
Tensor inn_inverse(const Tensor& h, const ParamSet& p, const TvcConfig& cfg);

// Embedding plus non-local enhancement blocks on a window-padded input.
Tensor pre_attention(const Tensor& y_padded, const ParamSet& p, const TvcConfig& cfg);

struct CodeResult {
  Tensor decoded;  // [1,3,H,W] in [0,1]
  Tensor bits;     // single element
  Tensor latent;   // quantized latent; undefined when nothing was coded
};

CodeResult intra_code(const Tensor& y, const ParamSet& p, const TvcConfig& cfg, const Quantizer& quant = {});

// Per-pixel displacement in pixels; cur(p) ~ ref(p - m(p)).
struct MotionField {
  int height = 0, width = 0;
  std::vector<double> dy, dx;

  Tensor as_tensor() const;  // [1,2,H,W]
  static MotionField zeros(int height, int width);
};

// Exhaustive block matching (SAD over 8-bit luma, edge clamp).
MotionField estimate_motion(const Frame& ref, const Frame& cur, int search_range, int block);
MotionField estimate_motion(const Tensor& ref, const Tensor& cur, int search_range, int block);

struct InterInputs {
  Tensor prev_decoded, next_decoded, current;
  // Estimated from the decoded references when not provided.
  const MotionField* motion_prev = nullptr;
  const MotionField* motion_next = nullptr;
  int search_range = 4;
  int block = 8;
};

CodeResult inter_code(const InterInputs& in, const ParamSet& p, const TvcConfig& cfg, const Quantizer& quant = {});
// The motion-compensated prediction x~_t in feature space ([1,L,H,W]).
Tensor inter_prediction(const Tensor& prev, const Tensor& next, const MotionField& mp, const MotionField& mn,
                        const ParamSet& p);
Tensor synthesize(const Tensor& features, const ParamSet& p, Index height, Index width);

struct GopResult {
  std::vector<Tensor> decoded;
  std::vector<Tensor> bits;
  std::vector<Tensor> latents;
  Tensor total_bits;
};

// Frames 0 and 2 intra, frame 1 inter from their decoded versions.
GopResult code_gop(const std::vector<Tensor>& frames, const ParamSet& p, const TvcConfig& cfg, const Quantizer& quant = {});

}  // namespace precodec
