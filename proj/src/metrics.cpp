#include "precodec/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <json.hpp>
#include <sstream>

namespace precodec {

namespace {

void check_same(const Frame& a, const Frame& b) {
  a.validate();
  b.validate();
  if (a.width != b.width || a.height != b.height)
    throw InvalidShape("frame sizes differ: " + std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                       std::to_string(b.width) + "x" + std::to_string(b.height));
}

double sse_y(const Frame& a, const Frame& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.y.size(); ++i) {
    const double d = double(a.y[i]) - double(b.y[i]);
    s += d * d;
  }
  return s;
}

double psnr_from_mse(double mse, double peak) {
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

void check_seqs(const VideoSeq& a, const VideoSeq& b) {
  if (a.frames.size() != b.frames.size() || a.frames.empty())
    throw InvalidShape("sequences differ in frame count: " + std::to_string(a.frames.size()) + " vs " +
                       std::to_string(b.frames.size()));
}

}  // namespace

double psnr_y(const Frame& a, const Frame& b) {
  check_same(a, b);
  return psnr_from_mse(sse_y(a, b) / double(a.y.size()), 255.0);
}

double psnr_y(const VideoSeq& a, const VideoSeq& b) {
  check_seqs(a, b);
  double s = 0.0, n = 0.0;
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    check_same(a.frames[i], b.frames[i]);
    s += sse_y(a.frames[i], b.frames[i]);
    n += double(a.frames[i].y.size());
  }
  return psnr_from_mse(s / n, 255.0);
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
  if (a.shape() != b.shape()) throw InvalidShape("psnr: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double s = 0.0;
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) s += (da[i] - db[i]) * (da[i] - db[i]);
  return psnr_from_mse(s / double(da.size()), peak);
}

std::array<double, 11> ssim_gaussian() {
  std::array<double, 11> g{};
  double s = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double x = i - 5;
    g[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    s += g[i];
  }
  for (double& v : g) v /= s;
  return g;
}

double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int width, int height) {
  if (width < 11 || height < 11) throw InvalidShape("ssim needs at least 11x11, got " + std::to_string(width) + "x" + std::to_string(height));
  if (a.size() != std::size_t(width) * height || b.size() != a.size()) throw InvalidShape("ssim plane size mismatch");
  const auto g = ssim_gaussian();
  const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  const int ow = width - 10, oh = height - 10;
  // separable filtering of a, b, a^2, b^2, ab; horizontal pass first
  std::vector<std::array<double, 5>> h(std::size_t(height) * ow);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < ow; ++x) {
      std::array<double, 5> acc{};
      for (int k = 0; k < 11; ++k) {
        const double va = a[std::size_t(y) * width + x + k], vb = b[std::size_t(y) * width + x + k];
        acc[0] += g[k] * va;
        acc[1] += g[k] * vb;
        acc[2] += g[k] * va * va;
        acc[3] += g[k] * vb * vb;
        acc[4] += g[k] * va * vb;
      }
      h[std::size_t(y) * ow + x] = acc;
    }
  double total = 0.0;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      std::array<double, 5> m{};
      for (int k = 0; k < 11; ++k)
        for (int c = 0; c < 5; ++c) m[c] += g[k] * h[std::size_t(y + k) * ow + x][c];
      const double va = m[2] - m[0] * m[0], vb = m[3] - m[1] * m[1], cov = m[4] - m[0] * m[1];
      total += ((2 * m[0] * m[1] + c1) * (2 * cov + c2)) / ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
    }
  return total / (double(ow) * oh);
}

double ssim_y(const Frame& a, const Frame& b) {
  check_same(a, b);
  std::vector<double> pa(a.y.begin(), a.y.end()), pb(b.y.begin(), b.y.end());
  return ssim_plane(pa, pb, a.width, a.height);
}

double ssim_y(const VideoSeq& a, const VideoSeq& b) {
  check_seqs(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.frames.size(); ++i) s += ssim_y(a.frames[i], b.frames[i]);
  return s / double(a.frames.size());
}

void RdCurve::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!(p.rate > 0) || !std::isfinite(p.rate)) throw InvalidArgument("rd point rate must be positive and finite");
    if (std::isnan(p.quality) || p.quality == -std::numeric_limits<double>::infinity())
      throw InvalidArgument("rd point quality must be finite or +inf");
    if (i > 0 && !(p.rate > points[i - 1].rate)) throw InvalidArgument("rd curve rates must be strictly increasing");
  }
}

int RdCurve::warn_inversions(const std::string& label) const {
  int n = 0;
  for (std::size_t i = 1; i < points.size(); ++i)
    if (points[i].quality < points[i - 1].quality) {
      ++n;
      std::cerr << "warning: " << label << " quality drops between " << points[i - 1].rate << " and " << points[i].rate
                << " kbps\n";
    }
  return n;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

std::string fmt17(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

RdCurve parse_curve_csv(const std::string& text) {
  static const char* kColumns[] = {"rate_kbps", "quality", "ladder_point"};
  auto split = [](const std::string& line) {
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      f.push_back(trim(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
      if (comma == std::string::npos) return f;
      start = comma + 1;
    }
  };
  RdCurve c;
  std::istringstream in(text);
  std::string line;
  std::size_t columns = 0;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      c.provenance.push_back(trim(line.substr(1)));
      continue;
    }
    const std::vector<std::string> f = split(line);
    if (columns == 0) {
      if (f.size() > 3) throw ConfigError("curve csv: unexpected column '" + f[3] + "'");
      for (std::size_t i = 0; i < 2; ++i) {
        const std::string got = i < f.size() ? f[i] : "";
        if (got != kColumns[i]) throw ConfigError(std::string("curve csv: expected column '") + kColumns[i] + "', found '" + got + "'");
      }
      if (f.size() == 3 && f[2] != kColumns[2]) throw ConfigError("curve csv: expected column 'ladder_point', found '" + f[2] + "'");
      columns = f.size();
      continue;
    }
    if (f.size() != columns)
      throw ConfigError("curve csv line " + std::to_string(lineno) + ": expected " + std::to_string(columns) + " fields");
    std::vector<double> v;
    for (const auto& field : f) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ConfigError("curve csv line " + std::to_string(lineno) + ": not a number: '" + field + "'");
      }
    }
    RdPoint p{v[0], v[1], {}};
    if (columns == 3) p.ladder_point = v[2];
    c.points.push_back(p);
  }
  if (columns == 0) throw ConfigError("curve csv: missing 'rate_kbps,quality' header");
  c.validate();
  return c;
}

RdCurve read_curve_csv(const std::filesystem::path& path) { return parse_curve_csv(read_file(path)); }

std::string format_curve_csv(const RdCurve& curve) {
  std::string s;
  for (const auto& p : curve.provenance) s += "# " + p + "\n";
  const bool ladder = !curve.points.empty() &&
                      std::all_of(curve.points.begin(), curve.points.end(), [](const RdPoint& p) { return p.ladder_point.has_value(); });
  s += ladder ? "rate_kbps,quality,ladder_point\n" : "rate_kbps,quality\n";
  for (const auto& p : curve.points) s += fmt17(p.rate) + "," + fmt17(p.quality) + (ladder ? "," + fmt17(*p.ladder_point) : "") + "\n";
  return s;
}

void write_curve_csv(const RdCurve& curve, const std::filesystem::path& path) { write_file(path, format_curve_csv(curve)); }

std::array<double, 4> fit_cubic(const std::vector<double>& t, const std::vector<double>& v) {
  if (t.size() != v.size() || t.size() < 4) throw InsufficientPoints("cubic fit needs at least 4 points, got " + std::to_string(t.size()));
  const Eigen::Index n = static_cast<Eigen::Index>(t.size());
  Eigen::MatrixXd A(n, 4);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = t[std::size_t(i)];
    A(i, 0) = 1.0;
    A(i, 1) = x;
    A(i, 2) = x * x;
    A(i, 3) = x * x * x;
    b(i) = v[std::size_t(i)];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < 4) throw InsufficientPoints("cubic fit needs 4 distinct abscissae");
  const Eigen::VectorXd c = qr.solve(b);
  return {c(0), c(1), c(2), c(3)};
}

double eval_cubic(const std::array<double, 4>& c, double t) { return ((c[3] * t + c[2]) * t + c[1]) * t + c[0]; }

double integrate_cubic(const std::array<double, 4>& c, double lo, double hi) {
  auto prim = [&](double t) { return (((c[3] / 4 * t + c[2] / 3) * t + c[1] / 2) * t + c[0]) * t; };
  return prim(hi) - prim(lo);
}

namespace {

struct Prepared {
  std::vector<double> log_rate, quality;
  int dropped = 0;
};

Prepared prepare(const RdCurve& c, const char* label) {
  c.validate();
  Prepared p;
  for (const auto& pt : c.points) {
    if (std::isinf(pt.quality)) {
      ++p.dropped;
      std::cerr << "warning: dropping infinite-quality point at " << pt.rate << " kbps from " << label << " curve\n";
      continue;
    }
    p.log_rate.push_back(std::log10(pt.rate));
    p.quality.push_back(pt.quality);
  }
  if (p.quality.size() < 4)
    throw InsufficientPoints(std::string(label) + " curve has " + std::to_string(p.quality.size()) + " usable points, need 4");
  return p;
}

std::array<double, 2> overlap(const std::vector<double>& a, const std::vector<double>& b) {
  const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
  const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
  const double lo = std::max(*amin, *bmin), hi = std::min(*amax, *bmax);
  if (!(hi > lo)) throw NoOverlap("rd curves do not overlap: [" + fmt17(*amin) + ", " + fmt17(*amax) + "] vs [" + fmt17(*bmin) + ", " + fmt17(*bmax) + "]");
  return {lo, hi};
}

}  // namespace

BdReport bd_report(const RdCurve& anchor, const RdCurve& test) {
  const Prepared a = prepare(anchor, "anchor"), t = prepare(test, "test");
  BdReport r;
  r.dropped_points = a.dropped + t.dropped;

  r.quality_interval = overlap(a.quality, t.quality);
  r.anchor_rate_fit = fit_cubic(a.quality, a.log_rate);
  r.test_rate_fit = fit_cubic(t.quality, t.log_rate);
  const auto [qlo, qhi] = r.quality_interval;
  const double avg_log_diff =
      (integrate_cubic(r.test_rate_fit, qlo, qhi) - integrate_cubic(r.anchor_rate_fit, qlo, qhi)) / (qhi - qlo);
  r.bd_rate = (std::pow(10.0, avg_log_diff) - 1.0) * 100.0;

  r.log_rate_interval = overlap(a.log_rate, t.log_rate);
  r.anchor_quality_fit = fit_cubic(a.log_rate, a.quality);
  r.test_quality_fit = fit_cubic(t.log_rate, t.quality);
  const auto [rlo, rhi] = r.log_rate_interval;
  r.bd_quality = (integrate_cubic(r.test_quality_fit, rlo, rhi) - integrate_cubic(r.anchor_quality_fit, rlo, rhi)) / (rhi - rlo);
  return r;
}

double bd_rate(const RdCurve& anchor, const RdCurve& test) { return bd_report(anchor, test).bd_rate; }
double bd_quality(const RdCurve& anchor, const RdCurve& test) { return bd_report(anchor, test).bd_quality; }

std::string BdReport::to_json() const {
  nlohmann::ordered_json j;
  j["bd_rate_percent"] = bd_rate;
  j["bd_quality"] = bd_quality;
  j["quality_metric"] = quality_metric;
  j["quality_interval"] = quality_interval;
  j["log10_rate_interval"] = log_rate_interval;
  j["fit"]["log10_rate_vs_quality"]["anchor"] = anchor_rate_fit;
  j["fit"]["log10_rate_vs_quality"]["test"] = test_rate_fit;
  j["fit"]["quality_vs_log10_rate"]["anchor"] = anchor_quality_fit;
  j["fit"]["quality_vs_log10_rate"]["test"] = test_quality_fit;
  j["dropped_points"] = dropped_points;
  return j.dump(2) + "\n";
}

}  // namespace precodec
