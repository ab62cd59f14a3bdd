#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "precodec/codec.hpp"
#include "precodec/params.hpp"
#include "precodec/pipeline.hpp"
#include "precodec/rarn.hpp"
#include "precodec/tvc.hpp"

namespace precodec {

struct ScaleSampling {
  std::vector<double> discrete{1.5, 2.0, 2.5};
  double continuous_lo = 1.25;
  double continuous_hi = 2.75;
  double p_continuous = 0.5;  // chance of drawing from the continuous range

  double sample(Rng& rng) const;
  void validate() const;
};

struct TrainConfig {
  double lambda = 0.05;
  double lambda_d = 0.5;
  double lambda_r = 0.1;
  AdamConfig rarn_adam{};
  AdamConfig tvc_adam{};
  int steps = 300;
  int tvc_steps_per_rarn_step = 1;
  int batch = 2;
  int crop_size = 32;
  std::uint64_t seed = 1;
  ScaleSampling scales{};
  Filter anchor_filter = Filter::kBicubic;
  double rate_alpha = 0.01;
  // Step size of the running rate-gain calibration, in log units.
  double gain_rate = 0.5;
  // Proxy-only fitting steps before alternating starts.
  int tvc_warmup_steps = 0;
  // Target codec for the proxy and its operating point.
  CodecConfig codec{};
  double codec_point = 37;
  // Frames 0/2 intra and 1 inter through the proxy; data items need >= 3 frames.
  bool gop_mode = false;
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

struct RdTerms {
  Tensor L, D, R;
};

// D = mse(x, Bicubic_up(y_tilde)) + lambda_d * mse(y, Anchor_down(x)),
// R = (R_tvc + lambda_r R_f) / (H_x W_x), L = D + lambda R.
RdTerms rd_loss(const Tensor& x, const Tensor& y, const Tensor& y_tilde, const Tensor& r_tvc_bits, const Tensor& r_f_bits,
                const TrainConfig& cfg);

struct TvcFitStats {
  double loss = 0.0;
  double mse = 0.0;
  double calibration = 0.0;
  double rate_ratio = 0.0;  // R_tvc / measured
};

// One optimizer step on `tvc` so intra_code(y_i) imitates targets[i].
// measured_bits is the codec's total for the batch. Returns
// L_tvc = MSE + alpha (R_tvc / measured - 1)^2 as evaluated before the step.
TvcFitStats tvc_fit_step(const std::vector<Tensor>& ys, const std::vector<Tensor>& targets, double measured_bits,
                         ParamSet& tvc, const TvcConfig& tvc_cfg, Adam& adam, Rng& rng, double alpha,
                         double gain_rate = 0.5);
// GOP variant: each item is three frames and its three codec outputs.
TvcFitStats tvc_fit_gop_step(const std::vector<std::vector<Tensor>>& gops, const std::vector<std::vector<Tensor>>& targets,
                             double measured_bits, ParamSet& tvc, const TvcConfig& tvc_cfg, Adam& adam, Rng& rng,
                             double alpha, double gain_rate = 0.5);

struct TrainRecord {
  int step = 0;
  double L = 0, D = 0, R = 0, L_tvc = 0;
  double scale = 0;
};

struct TrainReport {
  std::vector<TrainRecord> records;
  double wall_seconds = 0;
  std::vector<std::string> checkpoints;
  AdamConfig rarn_adam, tvc_adam;
  double lambda = 0;
  std::uint64_t seed = 0;

  std::string csv() const;
  std::string json_summary() const;
};

struct TrainResult {
  ParamSet rarn;
  ParamSet tvc;
  TrainReport report;
};

// Each data item holds one image or a clip, [1,3,H,W] per frame, at least
// crop_size in both extents. `rarn_init`/`tvc_init` default to seeded inits.
TrainResult alternate_train(const std::vector<std::vector<Tensor>>& data, const RarnConfig& rarn_cfg,
                            const TvcConfig& tvc_cfg, const TrainConfig& cfg, const ParamSet* rarn_init = nullptr,
                            const ParamSet* tvc_init = nullptr);

struct EvalRd {
  double L = 0, D = 0, bpp = 0, psnr = 0;
};

// RD loss through the real codec: y_tilde is the codec's decode and R the
// measured bits plus lambda_r * side bits, per source pixel. Averaged over crops.
EvalRd eval_rd_loss(const std::vector<Tensor>& crops, double scale, const Precoder& precoder, const TrainConfig& cfg);

// Deterministic crops of side `size` from the images.
std::vector<Tensor> take_crops(const std::vector<Tensor>& images, int size, int count, std::uint64_t seed);

}  // namespace precodec
