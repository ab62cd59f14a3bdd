#include "precodec/resample.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "precodec/ops.hpp"

namespace precodec {

void ScalePlan::validate() const {
  if (in_h < 1 || in_w < 1 || out_h < 1 || out_w < 1)
    throw InvalidArgument("scale plan extents must be >= 1 (" + std::to_string(in_h) + "x" + std::to_string(in_w) +
                          " -> " + std::to_string(out_h) + "x" + std::to_string(out_w) + ")");
}

ScalePlan make_plan(Index in_h, Index in_w, Index out_h, Index out_w) {
  ScalePlan p{in_h, in_w, out_h, out_w};
  p.validate();
  return p;
}

ScalePlan plan_for_scale(Index in_h, Index in_w, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidArgument("scale factor must be positive");
  auto out = [scale](Index v) { return std::max<Index>(1, static_cast<Index>(std::llround(static_cast<double>(v) / scale))); };
  return make_plan(in_h, in_w, out(in_h), out(in_w));
}

double normalize_coord(Index r, Index extent) {
  if (extent < 1 || r < 0 || r >= extent)
    throw InvalidArgument("coordinate " + std::to_string(r) + " outside [0," + std::to_string(extent) + ")");
  // Same value as -1 + (2R+1)/H with a single rounding, so p(R) = -p(H-1-R)
  // holds bit for bit.
  return static_cast<double>(2 * r + 1 - extent) / static_cast<double>(extent);
}

double denormalize_coord(double r, Index extent) {
  const double h = static_cast<double>(extent);
  const double q = std::fma(r, h, h - 1.0) * 0.5;
  // Pixel centers come back within a few ulps of an integer; snap those so
  // q(p(R)) == R exactly.
  const double nearest = std::round(q);
  if (std::abs(q - nearest) <= 8.0 * h * std::numeric_limits<double>::epsilon()) return nearest;
  return q;
}

namespace {

Index nearest_center(double r, Index extent) {
  const double q = denormalize_coord(r, extent);
  return std::clamp<Index>(static_cast<Index>(std::round(q)), 0, extent - 1);
}

double sampling_error(Index r, Index out, Index in) {
  const double rn = normalize_coord(r, out);
  return rn - normalize_coord(nearest_center(rn, in), in);
}

}  // namespace

double sampling_error_h(Index r, const ScalePlan& plan) { return sampling_error(r, plan.out_h, plan.in_h); }
double sampling_error_w(Index c, const ScalePlan& plan) { return sampling_error(c, plan.out_w, plan.in_w); }

namespace {

Tensor make_grid(const ScalePlan& plan, bool snap) {
  plan.validate();
  std::vector<double> v(static_cast<std::size_t>(plan.out_h * plan.out_w * 2));
  for (Index y = 0; y < plan.out_h; ++y) {
    double r = normalize_coord(y, plan.out_h);
    if (snap) r = normalize_coord(nearest_center(r, plan.in_h), plan.in_h);
    for (Index x = 0; x < plan.out_w; ++x) {
      double c = normalize_coord(x, plan.out_w);
      if (snap) c = normalize_coord(nearest_center(c, plan.in_w), plan.in_w);
      v[static_cast<std::size_t>((y * plan.out_w + x) * 2)] = r;
      v[static_cast<std::size_t>((y * plan.out_w + x) * 2 + 1)] = c;
    }
  }
  return Tensor::from({1, plan.out_h, plan.out_w, 2}, std::move(v));
}

}  // namespace

Tensor base_grid(const ScalePlan& plan) { return make_grid(plan, false); }
Tensor rounded_grid(const ScalePlan& plan) { return make_grid(plan, true); }

Tensor sampling_error_map(const ScalePlan& plan) {
  plan.validate();
  const Index n = plan.out_h * plan.out_w;
  std::vector<double> v(static_cast<std::size_t>(2 * n));
  for (Index y = 0; y < plan.out_h; ++y) {
    const double er = sampling_error_h(y, plan);
    for (Index x = 0; x < plan.out_w; ++x) {
      v[static_cast<std::size_t>(y * plan.out_w + x)] = er;
      v[static_cast<std::size_t>(n + y * plan.out_w + x)] = sampling_error_w(x, plan);
    }
  }
  return Tensor::from({1, 2, plan.out_h, plan.out_w}, std::move(v));
}

double keys_kernel(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

double keys_kernel_derivative(double x) {
  constexpr double a = -0.5;
  const double s = x < 0 ? -1.0 : 1.0;
  x = std::abs(x);
  if (x <= 1.0) return s * (3.0 * (a + 2.0) * x - 2.0 * (a + 3.0)) * x;
  if (x < 2.0) return s * ((3.0 * a * x - 10.0 * a) * x + 8.0 * a);
  return 0.0;
}

double lanczos_kernel(double x) {
  constexpr double a = 3.0;
  x = std::abs(x);
  if (x < 1e-12) return 1.0;
  if (x >= a) return 0.0;
  const double px = M_PI * x;
  return a * std::sin(px) * std::sin(px / a) / (px * px);
}

namespace {

// Sparse resampling matrix: each output index holds (input index, weight)
// pairs with clamped indices merged.
struct Taps {
  std::vector<Index> start;  // offsets into idx/w, size out+1
  std::vector<Index> idx;
  std::vector<double> w;
};

Taps build_taps(Index in, Index out, Filter filter) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double stretch = std::max(scale, 1.0);
  const double radius = (filter == Filter::kBicubic ? 2.0 : 3.0) * stretch;
  auto kernel = filter == Filter::kBicubic ? keys_kernel : lanczos_kernel;
  Taps t;
  t.start.push_back(0);
  std::vector<double> acc(static_cast<std::size_t>(in));
  for (Index o = 0; o < out; ++o) {
    const double center = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const Index lo = static_cast<Index>(std::ceil(center - radius));
    const Index hi = static_cast<Index>(std::floor(center + radius));
    std::fill(acc.begin(), acc.end(), 0.0);
    double total = 0.0;
    for (Index j = lo; j <= hi; ++j) {
      const double wt = kernel((static_cast<double>(j) - center) / stretch);
      if (wt == 0.0) continue;
      acc[static_cast<std::size_t>(std::clamp<Index>(j, 0, in - 1))] += wt;
      total += wt;
    }
    for (Index j = std::clamp<Index>(lo, 0, in - 1); j <= std::clamp<Index>(hi, 0, in - 1); ++j) {
      if (acc[static_cast<std::size_t>(j)] == 0.0) continue;
      t.idx.push_back(j);
      t.w.push_back(acc[static_cast<std::size_t>(j)] / total);
    }
    t.start.push_back(static_cast<Index>(t.idx.size()));
  }
  return t;
}

// out[p, o, q] = sum_j taps(o, j) * in[p, j, q] for a [P, In, Q] layout.
void apply_taps(const Taps& t, const double* in, double* out, Index p_count, Index in_len, Index out_len, Index q_count) {
  for (Index p = 0; p < p_count; ++p) {
    const double* src = in + p * in_len * q_count;
    double* dst = out + p * out_len * q_count;
    for (Index o = 0; o < out_len; ++o) {
      double* row = dst + o * q_count;
      std::fill(row, row + q_count, 0.0);
      for (Index k = t.start[o]; k < t.start[o + 1]; ++k) {
        const double w = t.w[k];
        const double* s = src + t.idx[k] * q_count;
        for (Index q = 0; q < q_count; ++q) row[q] += w * s[q];
      }
    }
  }
}

void apply_taps_transposed(const Taps& t, const double* g, double* out, Index p_count, Index in_len, Index out_len,
                           Index q_count) {
  for (Index p = 0; p < p_count; ++p) {
    const double* src = g + p * out_len * q_count;
    double* dst = out + p * in_len * q_count;
    for (Index o = 0; o < out_len; ++o) {
      const double* row = src + o * q_count;
      for (Index k = t.start[o]; k < t.start[o + 1]; ++k) {
        const double w = t.w[k];
        double* d = dst + t.idx[k] * q_count;
        for (Index q = 0; q < q_count; ++q) d[q] += w * row[q];
      }
    }
  }
}

}  // namespace

Tensor resize(const Tensor& img, const ScalePlan& plan, Filter filter) {
  plan.validate();
  if (img.rank() != 4 || img.dim(2) != plan.in_h || img.dim(3) != plan.in_w)
    throw InvalidShape("resize input " + shape_str(img.shape()) + " does not match plan " + std::to_string(plan.in_h) +
                       "x" + std::to_string(plan.in_w));
  const Index nc = img.dim(0) * img.dim(1);
  const Index hi = plan.in_h, wi = plan.in_w, ho = plan.out_h, wo = plan.out_w;
  auto th = std::make_shared<Taps>(build_taps(hi, ho, filter));
  auto tw = std::make_shared<Taps>(build_taps(wi, wo, filter));
  // Rows first ([nc, hi, wi] -> [nc, ho, wi]), then columns treated as a
  // [nc*ho, wi, 1] layout.
  std::vector<double> mid(static_cast<std::size_t>(nc * ho * wi));
  apply_taps(*th, img.data().data(), mid.data(), nc, hi, ho, wi);
  std::vector<double> out(static_cast<std::size_t>(nc * ho * wo));
  apply_taps(*tw, mid.data(), out.data(), nc * ho, wi, wo, 1);
  return make_result({img.dim(0), img.dim(1), ho, wo}, std::move(out), {img},
                     [th, tw, nc, hi, wi, ho, wo](std::span<const double> g, GradSink& sink) {
                       auto gx = sink[0];
                       if (gx.empty()) return;
                       std::vector<double> gmid(static_cast<std::size_t>(nc * ho * wi), 0.0);
                       apply_taps_transposed(*tw, g.data(), gmid.data(), nc * ho, wi, wo, 1);
                       apply_taps_transposed(*th, gmid.data(), gx.data(), nc, hi, ho, wi);
                     });
}

Tensor resize_to(const Tensor& img, Index out_h, Index out_w, Filter filter) {
  if (img.rank() != 4) throw InvalidShape("resize expects [N,C,H,W]");
  return resize(img, make_plan(img.dim(2), img.dim(3), out_h, out_w), filter);
}

Tensor grid_sample_bicubic(const Tensor& features, const Tensor& coords) {
  if (features.rank() != 4) throw InvalidShape("grid_sample features must be [N,C,H,W], got " + shape_str(features.shape()));
  if (coords.rank() != 4 || coords.dim(3) != 2 || coords.dim(0) != features.dim(0))
    throw InvalidShape("grid_sample coords must be [N,H,W,2], got " + shape_str(coords.shape()));
  const Index n = features.dim(0), c = features.dim(1), hi = features.dim(2), wi = features.dim(3);
  const Index ho = coords.dim(1), wo = coords.dim(2);
  const Index npix = ho * wo;
  auto fd = features.data();
  auto cd = coords.data();
  std::vector<double> out(static_cast<std::size_t>(n * c * npix));

  struct TapRow {
    Index iy[4], ix[4];
    double wy[4], wx[4], dwy[4], dwx[4];
  };
  auto taps_at = [hi, wi](double r, double cc) {
    TapRow t;
    const double py = denormalize_coord(r, hi), px = denormalize_coord(cc, wi);
    const double fy = std::floor(py), fx = std::floor(px);
    const double ty = py - fy, tx = px - fx;
    for (int m = 0; m < 4; ++m) {
      t.iy[m] = std::clamp<Index>(static_cast<Index>(fy) + m - 1, 0, hi - 1);
      t.ix[m] = std::clamp<Index>(static_cast<Index>(fx) + m - 1, 0, wi - 1);
      t.wy[m] = keys_kernel(ty - (m - 1));
      t.wx[m] = keys_kernel(tx - (m - 1));
      t.dwy[m] = keys_kernel_derivative(ty - (m - 1));
      t.dwx[m] = keys_kernel_derivative(tx - (m - 1));
    }
    return t;
  };

  for (Index b = 0; b < n; ++b)
    for (Index p = 0; p < npix; ++p) {
      const TapRow t = taps_at(cd[(b * npix + p) * 2], cd[(b * npix + p) * 2 + 1]);
      for (Index ch = 0; ch < c; ++ch) {
        const double* src = fd.data() + (b * c + ch) * hi * wi;
        double s = 0.0;
        for (int i = 0; i < 4; ++i) {
          double row = 0.0;
          for (int j = 0; j < 4; ++j) row += t.wx[j] * src[t.iy[i] * wi + t.ix[j]];
          s += t.wy[i] * row;
        }
        out[static_cast<std::size_t>((b * c + ch) * npix + p)] = s;
      }
    }

  return make_result({n, c, ho, wo}, std::move(out), {features, coords},
                     [features, coords, taps_at, n, c, hi, wi, npix](std::span<const double> g, GradSink& sink) {
                       auto gf = sink[0];
                       auto gc = sink[1];
                       auto fdd = features.data();
                       auto cdd = coords.data();
                       const double sy = static_cast<double>(hi) / 2.0, sx = static_cast<double>(wi) / 2.0;
                       for (Index b = 0; b < n; ++b)
                         for (Index p = 0; p < npix; ++p) {
                           const TapRow t = taps_at(cdd[(b * npix + p) * 2], cdd[(b * npix + p) * 2 + 1]);
                           double dr = 0.0, dc = 0.0;
                           for (Index ch = 0; ch < c; ++ch) {
                             const double go = g[static_cast<std::size_t>((b * c + ch) * npix + p)];
                             if (go == 0.0) continue;
                             const Index base = (b * c + ch) * hi * wi;
                             for (int i = 0; i < 4; ++i)
                               for (int j = 0; j < 4; ++j) {
                                 const Index at = base + t.iy[i] * wi + t.ix[j];
                                 if (!gf.empty()) gf[static_cast<std::size_t>(at)] += go * t.wy[i] * t.wx[j];
                                 if (!gc.empty()) {
                                   const double v = fdd[static_cast<std::size_t>(at)];
                                   dr += go * t.dwy[i] * t.wx[j] * v;
                                   dc += go * t.wy[i] * t.dwx[j] * v;
                                 }
                               }
                           }
                           if (!gc.empty()) {
                             gc[static_cast<std::size_t>((b * npix + p) * 2)] += dr * sy;
                             gc[static_cast<std::size_t>((b * npix + p) * 2 + 1)] += dc * sx;
                           }
                         }
                     });
}

Tensor deformable_compensated_sample(const Tensor& features, const Tensor& base_coords, const Tensor& offsets,
                                     const Tensor& weights) {
  if (offsets.rank() != 5 || weights.rank() != 5 || offsets.dim(4) != 2)
    throw InvalidShape("offsets must be [N,K,H,W,2] and weights [N,K,C,H,W]");
  const Index n = features.dim(0), c = features.dim(1), k = offsets.dim(1);
  const Index ho = base_coords.dim(1), wo = base_coords.dim(2);
  if (k < 1 || weights.dim(1) != k) throw InvalidShape("offset and weight tap counts differ (" + std::to_string(k) + " vs " + std::to_string(weights.dim(1)) + ")");
  if (offsets.dim(0) != n || offsets.dim(2) != ho || offsets.dim(3) != wo || weights.dim(0) != n ||
      weights.dim(2) != c || weights.dim(3) != ho || weights.dim(4) != wo)
    throw InvalidShape("offsets/weights do not match the query grid");
  Tensor out = grid_sample_bicubic(features, base_coords);
  for (Index i = 0; i < k; ++i) {
    Tensor off = reshape(slice(offsets, 1, i, 1), {n, ho, wo, 2});
    Tensor w = reshape(slice(weights, 1, i, 1), {n, c, ho, wo});
    out = add(out, mul(w, grid_sample_bicubic(features, add(base_coords, off))));
  }
  return out;
}

Tensor warp_bilinear(const Tensor& x, const Tensor& flow) {
  if (x.rank() != 4 || flow.rank() != 4 || flow.dim(1) != 2 || flow.dim(0) != x.dim(0) || flow.dim(2) != x.dim(2) ||
      flow.dim(3) != x.dim(3))
    throw InvalidShape("warp expects x[N,C,H,W] and flow[N,2,H,W], got " + shape_str(x.shape()) + " / " +
                       shape_str(flow.shape()));
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), np = h * w;
  struct Tap {
    Index i[4];
    double w[4];
  };
  auto taps = std::make_shared<std::vector<Tap>>(static_cast<std::size_t>(n * np));
  auto fl = flow.data();
  for (Index b = 0; b < n; ++b)
    for (Index y = 0; y < h; ++y)
      for (Index xx = 0; xx < w; ++xx) {
        const Index p = y * w + xx;
        const double sy = std::clamp(static_cast<double>(y) - fl[(b * 2) * np + p], 0.0, static_cast<double>(h - 1));
        const double sx = std::clamp(static_cast<double>(xx) - fl[(b * 2 + 1) * np + p], 0.0, static_cast<double>(w - 1));
        const Index y0 = static_cast<Index>(std::floor(sy)), x0 = static_cast<Index>(std::floor(sx));
        const Index y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
        const double fy = sy - y0, fx = sx - x0;
        (*taps)[static_cast<std::size_t>(b * np + p)] = {{y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1},
                                                         {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx}};
      }
  auto xd = x.data();
  std::vector<double> out(static_cast<std::size_t>(n * c * np));
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      const double* src = xd.data() + (b * c + ch) * np;
      for (Index p = 0; p < np; ++p) {
        const Tap& t = (*taps)[static_cast<std::size_t>(b * np + p)];
        out[static_cast<std::size_t>((b * c + ch) * np + p)] =
            t.w[0] * src[t.i[0]] + t.w[1] * src[t.i[1]] + t.w[2] * src[t.i[2]] + t.w[3] * src[t.i[3]];
      }
    }
  return make_result(x.shape(), std::move(out), {x}, [taps, n, c, np](std::span<const double> g, GradSink& sink) {
    auto gx = sink[0];
    if (gx.empty()) return;
    for (Index b = 0; b < n; ++b)
      for (Index ch = 0; ch < c; ++ch) {
        double* dst = gx.data() + (b * c + ch) * np;
        for (Index p = 0; p < np; ++p) {
          const Tap& t = (*taps)[static_cast<std::size_t>(b * np + p)];
          const double go = g[static_cast<std::size_t>((b * c + ch) * np + p)];
          for (int m = 0; m < 4; ++m) dst[t.i[m]] += t.w[m] * go;
        }
      }
  });
}

}  // namespace precodec
