#include "precodec/pipeline.hpp"

#include <algorithm>

namespace precodec {

Precoder filter_precoder(Filter filter) {
  return [filter](const Tensor& x, const ScalePlan& plan) { return Precoded{resize(x, plan, filter), 0.0}; };
}

Precoder rarn_precoder(ParamSet params, RarnConfig config) {
  check_rarn_params(config, params);
  return [params = std::move(params), config](const Tensor& x, const ScalePlan& plan) {
    RarnOutput out = precode(x, plan, params, config);
    return Precoded{out.y, out.rate_bits.item()};
  };
}

VideoSeq precode_sequence(const VideoSeq& source, const Precoder& precoder, const ScalePlan& plan, double* side_bits) {
  source.validate();
  if (plan.in_h != source.height() || plan.in_w != source.width())
    throw InvalidArgument("scale plan input " + std::to_string(plan.in_w) + "x" + std::to_string(plan.in_h) +
                          " does not match the source " + std::to_string(source.width()) + "x" + std::to_string(source.height()));
  VideoSeq out;
  out.fps_num = source.fps_num;
  out.fps_den = source.fps_den;
  double side = 0.0;
  for (const Frame& f : source.frames) {
    Precoded p = precoder(frame_to_tensor(f), plan);
    side += p.side_bits;
    out.frames.push_back(tensor_to_frame(p.y));
  }
  if (side_bits != nullptr) *side_bits = side;
  return out;
}

namespace {

RdCurve sorted_curve(const std::vector<CurvePoint>& pts, bool ssim) {
  RdCurve c;
  for (const auto& p : pts) c.points.push_back({p.kbps, ssim ? p.ssim_y : p.psnr_y, p.ladder_point});
  std::sort(c.points.begin(), c.points.end(), [](const RdPoint& a, const RdPoint& b) { return a.rate < b.rate; });
  return c;
}

}  // namespace

RdCurve MethodCurve::psnr_curve() const { return sorted_curve(points, false); }
RdCurve MethodCurve::ssim_curve() const { return sorted_curve(points, true); }

MethodCurve evaluate_method(const std::string& name, const VideoSeq& source, const Precoder& precoder,
                            const ScalePlan& plan, const CodecConfig& codec, Filter upsample) {
  MethodCurve mc;
  mc.method = name;
  const VideoSeq low = precode_sequence(source, precoder, plan, &mc.side_bits);
  const auto results = run_ladder(low, codec);
  for (const EncodeResult& r : results) {
    VideoSeq up;
    up.fps_num = source.fps_num;
    up.fps_den = source.fps_den;
    for (const Frame& f : r.decoded.frames)
      up.frames.push_back(tensor_to_frame(resize_to(frame_to_tensor(f), source.height(), source.width(), upsample)));
    mc.points.push_back({r.ladder_point, r.bits_total, r.kbps, psnr_y(source, up), ssim_y(source, up)});
  }
  return mc;
}

CodecPass codec_pass(const Tensor& y, const CodecConfig& codec, double point) {
  VideoSeq s;
  s.frames.push_back(tensor_to_frame(y));
  EncodeResult r = encode_decode(s, codec, point);
  return {frame_to_tensor(r.decoded.frames.at(0)), r.bits_total};
}

}  // namespace precodec
