#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "precodec/imageio.hpp"
#include "precodec/tensor.hpp"

namespace precodec {

// +inf when the planes are identical.
double psnr_y(const Frame& a, const Frame& b);
// 10 log10(255^2 / MSE) with the MSE pooled over every frame.
double psnr_y(const VideoSeq& a, const VideoSeq& b);
// PSNR of [N,C,H,W] tensors with values in [0, peak].
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// Single-scale SSIM on Y: 11x11 Gaussian (sigma 1.5), K1 0.01, K2 0.03,
// L 255, mean over window positions fully inside the image.
double ssim_y(const Frame& a, const Frame& b);
double ssim_y(const VideoSeq& a, const VideoSeq& b);  // frame average
double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int width, int height);
// The 11-tap normalized Gaussian.
std::array<double, 11> ssim_gaussian();

struct RdPoint {
  double rate = 0.0;  // kbps
  double quality = 0.0;
  std::optional<double> ladder_point;  // QP or target kbps that produced it
};

struct RdCurve {
  std::vector<RdPoint> points;
  // '#' lines of the CSV, without the marker.
  std::vector<std::string> provenance;

  // Rates positive and strictly increasing; qualities finite or +inf.
  void validate() const;
  // Prints a warning per quality inversion; returns how many there were.
  int warn_inversions(const std::string& label) const;
};

// Header "rate_kbps,quality" with an optional third column "ladder_point"
// (written when every point has one). '#' lines carry provenance.
RdCurve read_curve_csv(const std::filesystem::path& path);
RdCurve parse_curve_csv(const std::string& text);
std::string format_curve_csv(const RdCurve& curve);
void write_curve_csv(const RdCurve& curve, const std::filesystem::path& path);

// Least-squares cubic, coefficients c0..c3 of c0 + c1 t + c2 t^2 + c3 t^3.
std::array<double, 4> fit_cubic(const std::vector<double>& t, const std::vector<double>& v);
double eval_cubic(const std::array<double, 4>& c, double t);
double integrate_cubic(const std::array<double, 4>& c, double lo, double hi);

// Percent rate change of `test` at equal quality. Negative saves rate.
double bd_rate(const RdCurve& anchor, const RdCurve& test);
// Quality change of `test` at equal rate.
double bd_quality(const RdCurve& anchor, const RdCurve& test);

struct BdReport {
  double bd_rate = 0.0;
  double bd_quality = 0.0;
  std::array<double, 2> quality_interval{};
  std::array<double, 2> log_rate_interval{};
  // log10(rate) as a cubic in quality
  std::array<double, 4> anchor_rate_fit{}, test_rate_fit{};
  // quality as a cubic in log10(rate)
  std::array<double, 4> anchor_quality_fit{}, test_quality_fit{};
  int dropped_points = 0;
  std::string quality_metric = "psnr_y";

  std::string to_json() const;
};

BdReport bd_report(const RdCurve& anchor, const RdCurve& test);

}  // namespace precodec
