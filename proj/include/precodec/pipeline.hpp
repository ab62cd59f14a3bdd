#pragma once

#include <functional>
#include <string>
#include <vector>

#include "precodec/codec.hpp"
#include "precodec/metrics.hpp"
#include "precodec/rarn.hpp"
#include "precodec/resample.hpp"

namespace precodec {

struct Precoded {
  Tensor y;                // [1,3,h,w] in [0,1]
  double side_bits = 0.0;  // R_f for the learned precoder, 0 for fixed filters
};

// Eval-mode precoder of one [1,3,H,W] frame to the plan's output size.
using Precoder = std::function<Precoded(const Tensor& x, const ScalePlan& plan)>;

Precoder filter_precoder(Filter filter);
Precoder rarn_precoder(ParamSet params, RarnConfig config);

VideoSeq precode_sequence(const VideoSeq& source, const Precoder& precoder, const ScalePlan& plan,
                          double* side_bits = nullptr);

struct CurvePoint {
  double ladder_point = 0.0;
  std::int64_t bits = 0;
  double kbps = 0.0;
  double psnr_y = 0.0;
  double ssim_y = 0.0;
};

struct MethodCurve {
  std::string method;
  std::vector<CurvePoint> points;  // ladder order
  double side_bits = 0.0;

  // Sorted by rate.
  RdCurve psnr_curve() const;
  RdCurve ssim_curve() const;
};

// precode -> ladder encode/decode -> `upsample` back to the source size ->
// Y-PSNR / Y-SSIM against the source.
MethodCurve evaluate_method(const std::string& name, const VideoSeq& source, const Precoder& precoder,
                            const ScalePlan& plan, const CodecConfig& codec, Filter upsample = Filter::kBicubic);

// Frame <-> tensor for a single mock/real codec pass on one low-res image.
struct CodecPass {
  Tensor decoded;
  std::int64_t bits = 0;
};
CodecPass codec_pass(const Tensor& y, const CodecConfig& codec, double point);

}  // namespace precodec
