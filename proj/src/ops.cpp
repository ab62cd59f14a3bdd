#include "precodec/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace precodec {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

std::size_t sz(Index v) { return static_cast<std::size_t>(v); }

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw InvalidShape(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                       shape_str(x.shape()));
  }
}

bool is_scalar(const Tensor& t) { return t.numel() == 1; }

enum class BinOp { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  const bool bs = is_scalar(b) && !is_scalar(a);
  if (!bs && a.shape() != b.shape()) {
    throw InvalidShape("elementwise op shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto ad = a.data();
  auto bd = b.data();
  const std::size_t n = ad.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double bv = bs ? bd[0] : bd[i];
    switch (op) {
      case BinOp::kAdd: out[i] = ad[i] + bv; break;
      case BinOp::kSub: out[i] = ad[i] - bv; break;
      case BinOp::kMul: out[i] = ad[i] * bv; break;
    }
  }
  return make_result(a.shape(), std::move(out), {a, b}, [a, b, bs, op](std::span<const double> g, GradSink& sink) {
    auto ga = sink[0];
    auto gb = sink[1];
    auto ad = a.data();
    auto bd = b.data();
    const std::size_t n = g.size();
    if (!ga.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        const double bv = bs ? bd[0] : bd[i];
        ga[i] += op == BinOp::kMul ? g[i] * bv : g[i];
      }
    }
    if (!gb.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        double d = op == BinOp::kMul ? g[i] * ad[i] : (op == BinOp::kSub ? -g[i] : g[i]);
        gb[bs ? 0 : i] += d;
      }
    }
  });
}

// Elementwise unary op whose derivative is a function of (input, output).
template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D dfdx) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result(x.shape(), std::move(out), {x}, [x, y, dfdx](std::span<const double> g, GradSink& sink) {
    auto gx = sink[0];
    if (gx.empty()) return;
    auto xd = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xd[i], (*y)[i]);
  });
}

std::vector<Index> strides_of(const Shape& s) {
  std::vector<Index> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul); }

Tensor add_scalar(const Tensor& x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary(x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
      [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

Tensor clamp_st(const Tensor& x, double lo, double hi) {
  return unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); }, [](double, double) { return 1.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor round_values(const Tensor& x) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = std::round(xd[i]);
  return make_result(x.shape(), std::move(out), {x}, nullptr);
}

Tensor sum(const Tensor& x) {
  auto xd = x.data();
  double s = 0.0;
  for (double v : xd) s += v;
  return make_result({1}, {s}, {x}, [](std::span<const double> g, GradSink& sink) {
    auto gx = sink[0];
    for (double& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw InvalidShape("softmax axis out of range for " + shape_str(s));
  Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const Index len = s[axis];
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * len * inner + in;
      double mx = -INFINITY;
      for (Index k = 0; k < len; ++k) mx = std::max(mx, xd[sz(base + k * inner)]);
      double z = 0.0;
      for (Index k = 0; k < len; ++k) {
        const double e = std::exp(xd[sz(base + k * inner)] - mx);
        out[sz(base + k * inner)] = e;
        z += e;
      }
      for (Index k = 0; k < len; ++k) out[sz(base + k * inner)] /= z;
    }
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result(s, std::move(out), {x}, [y, outer, inner, len](std::span<const double> g, GradSink& sink) {
    auto gx = sink[0];
    if (gx.empty()) return;
    for (Index o = 0; o < outer; ++o) {
      for (Index in = 0; in < inner; ++in) {
        const Index base = o * len * inner + in;
        double dot = 0.0;
        for (Index k = 0; k < len; ++k) dot += g[sz(base + k * inner)] * (*y)[sz(base + k * inner)];
        for (Index k = 0; k < len; ++k) {
          const std::size_t i = sz(base + k * inner);
          gx[i] += (*y)[i] * (g[i] - dot);
        }
      }
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw InvalidShape("matmul inner dimension mismatch " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  std::vector<double> out(sz(m * n));
  Map(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](std::span<const double> g, GradSink& sink) {
    MapC G(g.data(), m, n);
    if (auto ga = sink[0]; !ga.empty()) Map(ga.data(), m, k).noalias() += G * MapC(b.data().data(), k, n).transpose();
    if (auto gb = sink[1]; !gb.empty()) Map(gb.data(), k, n).noalias() += MapC(a.data().data(), m, k).transpose() * G;
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const Index batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const Index n = transpose_b ? b.dim(1) : b.dim(2);
  const Index bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != batch || bk != k) {
    throw InvalidShape("bmm shape mismatch " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  }
  std::vector<double> out(sz(batch * m * n));
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (Index i = 0; i < batch; ++i) {
    MapC A(ap + i * m * k, m, k);
    Map O(out.data() + i * m * n, m, n);
    if (transpose_b) {
      O.noalias() = A * MapC(bp + i * n * k, n, k).transpose();
    } else {
      O.noalias() = A * MapC(bp + i * k * n, k, n);
    }
  }
  return make_result({batch, m, n}, std::move(out), {a, b},
                     [a, b, batch, m, k, n, transpose_b](std::span<const double> g, GradSink& sink) {
                       auto ga = sink[0];
                       auto gb = sink[1];
                       const double* ap = a.data().data();
                       const double* bp = b.data().data();
                       for (Index i = 0; i < batch; ++i) {
                         MapC G(g.data() + i * m * n, m, n);
                         MapC A(ap + i * m * k, m, k);
                         if (transpose_b) {
                           MapC B(bp + i * n * k, n, k);
                           if (!ga.empty()) Map(ga.data() + i * m * k, m, k).noalias() += G * B;
                           if (!gb.empty()) Map(gb.data() + i * n * k, n, k).noalias() += G.transpose() * A;
                         } else {
                           MapC B(bp + i * k * n, k, n);
                           if (!ga.empty()) Map(ga.data() + i * m * k, m, k).noalias() += G * B.transpose();
                           if (!gb.empty()) Map(gb.data() + i * k * n, k, n).noalias() += A.transpose() * G;
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear");
  const Index out_f = weight.dim(0), in_f = weight.dim(1);
  if (x.rank() < 1 || x.shape().back() != in_f) {
    throw InvalidShape("linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.numel() != out_f)) throw InvalidShape("linear: bias size mismatch");
  const Index rows = x.numel() / in_f;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  std::vector<double> out(sz(rows * out_f));
  Map O(out.data(), rows, out_f);
  O.noalias() = MapC(x.data().data(), rows, in_f) * MapC(weight.data().data(), out_f, in_f).transpose();
  if (bias.defined()) {
    Eigen::Map<const Eigen::RowVectorXd> bv(bias.data().data(), out_f);
    O.rowwise() += bv;
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result(std::move(out_shape), std::move(out), inputs,
                     [x, weight, rows, in_f, out_f, has_bias](std::span<const double> g, GradSink& sink) {
                       MapC G(g.data(), rows, out_f);
                       if (auto gx = sink[0]; !gx.empty()) {
                         Map(gx.data(), rows, in_f).noalias() += G * MapC(weight.data().data(), out_f, in_f);
                       }
                       if (auto gw = sink[1]; !gw.empty()) {
                         Map(gw.data(), out_f, in_f).noalias() += G.transpose() * MapC(x.data().data(), rows, in_f);
                       }
                       if (has_bias) {
                         if (auto gb = sink[2]; !gb.empty()) {
                           Eigen::Map<Eigen::RowVectorXd>(gb.data(), out_f) += G.colwise().sum();
                         }
                       }
                     });
}

namespace {

struct ConvGeom {
  Index n, c, h, w, o, kh, kw, oh, ow;
  int stride, pad;
};

// Fills cols[(c*kh+i)*kw+j][p - p0] for output pixels p in [p0, p1).
void im2col(const double* img, const ConvGeom& g, Index p0, Index p1, double* cols) {
  const Index np = p1 - p0;
  for (Index c = 0; c < g.c; ++c) {
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * np;
        for (Index p = p0; p < p1; ++p) {
          const Index oy = p / g.ow, ox = p % g.ow;
          const Index iy = oy * g.stride - g.pad + i;
          const Index ix = ox * g.stride - g.pad + j;
          row[p - p0] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? img[(c * g.h + iy) * g.w + ix] : 0.0;
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeom& g, Index p0, Index p1, double* img) {
  const Index np = p1 - p0;
  for (Index c = 0; c < g.c; ++c) {
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * np;
        for (Index p = p0; p < p1; ++p) {
          const Index oy = p / g.ow, ox = p % g.ow;
          const Index iy = oy * g.stride - g.pad + i;
          const Index ix = ox * g.stride - g.pad + j;
          if (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) img[(c * g.h + iy) * g.w + ix] += row[p - p0];
        }
      }
    }
  }
}

// Output pixels per im2col chunk; bounds scratch memory on large frames.
constexpr Index kConvChunk = 16384;

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  require_rank(input, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  if (stride < 1 || pad < 0) throw InvalidArgument("conv2d: stride must be >= 1 and pad >= 0");
  ConvGeom g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), 0, 0, stride, pad};
  if (weight.dim(1) != g.c) {
    throw InvalidShape("conv2d: weight " + shape_str(weight.shape()) + " does not match input channels of " + shape_str(input.shape()));
  }
  if (g.kh > g.h + 2 * pad || g.kw > g.w + 2 * pad) throw InvalidShape("conv2d: kernel larger than padded input");
  if (bias.defined() && bias.numel() != g.o) throw InvalidShape("conv2d: bias size mismatch");
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  const Index k_len = g.c * g.kh * g.kw;
  const Index npix = g.oh * g.ow;
  std::vector<double> out(sz(g.n * g.o * npix));
  MapC W(weight.data().data(), g.o, k_len);
  std::vector<double> cols;
  const double* in = input.data().data();
  for (Index b = 0; b < g.n; ++b) {
    for (Index p0 = 0; p0 < npix; p0 += kConvChunk) {
      const Index p1 = std::min(npix, p0 + kConvChunk);
      const Index np = p1 - p0;
      cols.resize(sz(k_len * np));
      im2col(in + b * g.c * g.h * g.w, g, p0, p1, cols.data());
      Eigen::Map<RowMat, 0, Eigen::OuterStride<>> O(out.data() + b * g.o * npix + p0, g.o, np, Eigen::OuterStride<>(npix));
      O.noalias() = W * MapC(cols.data(), k_len, np);
      if (bias.defined()) {
        Eigen::Map<const Eigen::VectorXd> bv(bias.data().data(), g.o);
        O.colwise() += bv;
      }
    }
  }
  std::vector<Tensor> inputs{input, weight};
  const bool has_bias = bias.defined();
  if (has_bias) inputs.push_back(bias);
  return make_result({g.n, g.o, g.oh, g.ow}, std::move(out), inputs,
                     [input, weight, g, k_len, npix, has_bias](std::span<const double> grad, GradSink& sink) {
                       auto gin = sink[0];
                       auto gw = sink[1];
                       std::span<double> gb = has_bias ? sink[2] : std::span<double>{};
                       MapC W(weight.data().data(), g.o, k_len);
                       std::vector<double> cols, dcols;
                       const double* in = input.data().data();
                       for (Index b = 0; b < g.n; ++b) {
                         for (Index p0 = 0; p0 < npix; p0 += kConvChunk) {
                           const Index p1 = std::min(npix, p0 + kConvChunk);
                           const Index np = p1 - p0;
                           Eigen::Map<const RowMat, 0, Eigen::OuterStride<>> G(grad.data() + b * g.o * npix + p0, g.o, np,
                                                                              Eigen::OuterStride<>(npix));
                           if (!gw.empty()) {
                             cols.resize(sz(k_len * np));
                             im2col(in + b * g.c * g.h * g.w, g, p0, p1, cols.data());
                             Map(gw.data(), g.o, k_len).noalias() += G * MapC(cols.data(), k_len, np).transpose();
                           }
                           if (!gin.empty()) {
                             dcols.resize(sz(k_len * np));
                             Map(dcols.data(), k_len, np).noalias() = W.transpose() * G;
                             col2im(dcols.data(), g, p0, p1, gin.data() + b * g.c * g.h * g.w);
                           }
                           if (!gb.empty()) {
                             Eigen::Map<Eigen::VectorXd>(gb.data(), g.o) += G.rowwise().sum();
                           }
                         }
                       }
                     });
}

Tensor bias_add(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2 || bias.numel() != x.dim(1)) {
    throw InvalidShape("bias_add: bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  }
  const Index n = x.dim(0), c = x.dim(1), inner = x.numel() / (n * c);
  auto xd = x.data();
  auto bd = bias.data();
  std::vector<double> out(xd.size());
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch)
      for (Index i = 0; i < inner; ++i) {
        const std::size_t idx = sz((b * c + ch) * inner + i);
        out[idx] = xd[idx] + bd[sz(ch)];
      }
  return make_result(x.shape(), std::move(out), {x, bias}, [n, c, inner](std::span<const double> g, GradSink& sink) {
    if (auto gx = sink[0]; !gx.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    if (auto gb = sink[1]; !gb.empty())
      for (Index b = 0; b < n; ++b)
        for (Index ch = 0; ch < c; ++ch)
          for (Index i = 0; i < inner; ++i) gb[sz(ch)] += g[sz((b * c + ch) * inner + i)];
  });
}

Tensor take(const Tensor& x, IndexMap index, Shape out_shape) {
  if (numel_of(out_shape) != static_cast<Index>(index->size())) throw InvalidShape("take: index count mismatch");
  auto xd = x.data();
  const Index n = x.numel();
  std::vector<double> out(index->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Index src = (*index)[i];
    if (src >= n) throw InvalidArgument("take: index out of range");
    out[i] = src < 0 ? 0.0 : xd[sz(src)];
  }
  return make_result(std::move(out_shape), std::move(out), {x}, [index](std::span<const double> g, GradSink& sink) {
    auto gx = sink[0];
    if (gx.empty()) return;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Index src = (*index)[i];
      if (src >= 0) gx[sz(src)] += g[i];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw InvalidShape("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return make_result(std::move(shape), x.to_vector(), {x}, [](std::span<const double> g, GradSink& sink) {
    auto gx = sink[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const Shape& s = x.shape();
  if (order.size() != s.size()) throw InvalidShape("permute: order rank mismatch");
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < order.size(); ++i) out_shape[i] = s.at(order[i]);
  const auto in_st = strides_of(s);
  const Index n = x.numel();
  auto idx = std::make_shared<std::vector<Index>>(sz(n));
  std::vector<Index> counter(s.size(), 0);
  for (Index flat = 0; flat < n; ++flat) {
    Index src = 0;
    for (std::size_t d = 0; d < order.size(); ++d) src += counter[d] * in_st[order[d]];
    (*idx)[sz(flat)] = src;
    for (std::size_t d = order.size(); d-- > 0;) {
      if (++counter[d] < out_shape[d]) break;
      counter[d] = 0;
    }
  }
  return take(x, idx, out_shape);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw InvalidArgument("concat: no inputs");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw InvalidShape("concat: axis out of range");
  Index total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != out_shape.size()) throw InvalidShape("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != out_shape[d]) throw InvalidShape("concat: extent mismatch " + shape_str(s) + " vs " + shape_str(out_shape));
    total += s[axis];
  }
  out_shape[axis] = total;
  Index outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
  for (std::size_t d = axis + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
  std::vector<double> out(sz(numel_of(out_shape)));
  std::vector<Index> offsets;
  Index off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    const Index len = p.dim(axis);
    auto pd = p.data();
    for (Index o = 0; o < outer; ++o)
      std::copy_n(pd.begin() + o * len * inner, len * inner, out.begin() + (o * total + off) * inner);
    off += len;
  }
  std::vector<Index> lens;
  for (const Tensor& p : parts) lens.push_back(p.dim(axis));
  return make_result(std::move(out_shape), std::move(out), parts,
                     [offsets, lens, outer, inner, total](std::span<const double> g, GradSink& sink) {
                       for (std::size_t i = 0; i < lens.size(); ++i) {
                         auto gp = sink[i];
                         if (gp.empty()) continue;
                         for (Index o = 0; o < outer; ++o)
                           for (Index k = 0; k < lens[i] * inner; ++k)
                             gp[sz(o * lens[i] * inner + k)] += g[sz((o * total + offsets[i]) * inner + k)];
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, Index start, Index length) {
  const Shape& s = x.shape();
  if (axis >= s.size() || start < 0 || length < 1 || start + length > s[axis]) {
    throw InvalidShape("slice out of range on " + shape_str(s));
  }
  Shape out_shape = s;
  out_shape[axis] = length;
  Index outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  auto idx = std::make_shared<std::vector<Index>>();
  idx->reserve(sz(outer * length * inner));
  for (Index o = 0; o < outer; ++o)
    for (Index k = 0; k < length * inner; ++k) idx->push_back((o * s[axis] + start) * inner + k);
  return take(x, idx, out_shape);
}

namespace {

// Builds a gather map over [N,C,H,W] using a per-plane pixel map.
IndexMap spatial_map(Index planes, Index in_h, Index in_w, Index out_h, Index out_w,
                     const std::function<Index(Index, Index)>& src_of) {
  auto idx = std::make_shared<std::vector<Index>>(sz(planes * out_h * out_w));
  std::vector<Index> plane_map(sz(out_h * out_w));
  for (Index y = 0; y < out_h; ++y)
    for (Index x = 0; x < out_w; ++x) plane_map[sz(y * out_w + x)] = src_of(y, x);
  for (Index p = 0; p < planes; ++p)
    for (Index i = 0; i < out_h * out_w; ++i) (*idx)[sz(p * out_h * out_w + i)] = p * in_h * in_w + plane_map[sz(i)];
  return idx;
}

}  // namespace

Tensor pixel_unshuffle(const Tensor& x, int factor) {
  require_rank(x, 4, "pixel_unshuffle");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), r = factor;
  if (r < 1 || h % r || w % r) throw InvalidShape("pixel_unshuffle: extents not divisible by factor");
  const Index oh = h / r, ow = w / r, oc = c * r * r;
  auto idx = std::make_shared<std::vector<Index>>(sz(n * oc * oh * ow));
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < oc; ++ch) {
      const Index src_c = ch / (r * r), dy = (ch % (r * r)) / r, dx = ch % r;
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx)
          (*idx)[sz(((b * oc + ch) * oh + y) * ow + xx)] = ((b * c + src_c) * h + y * r + dy) * w + xx * r + dx;
    }
  return take(x, idx, {n, oc, oh, ow});
}

Tensor pixel_shuffle(const Tensor& x, int factor) {
  require_rank(x, 4, "pixel_shuffle");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), r = factor;
  if (r < 1 || c % (r * r)) throw InvalidShape("pixel_shuffle: channels not divisible by factor^2");
  const Index oc = c / (r * r), oh = h * r, ow = w * r;
  auto idx = std::make_shared<std::vector<Index>>(sz(n * oc * oh * ow));
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < oc; ++ch)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) {
          const Index src_c = ch * r * r + (y % r) * r + (xx % r);
          (*idx)[sz(((b * oc + ch) * oh + y) * ow + xx)] = ((b * c + src_c) * h + y / r) * w + xx / r;
        }
  return take(x, idx, {n, oc, oh, ow});
}

Tensor roll(const Tensor& x, Index shift_h, Index shift_w) {
  require_rank(x, 4, "roll");
  const Index h = x.dim(2), w = x.dim(3);
  auto mod = [](Index a, Index m) { return ((a % m) + m) % m; };
  auto idx = spatial_map(x.dim(0) * x.dim(1), h, w, h, w,
                         [&](Index y, Index xx) { return mod(y - shift_h, h) * w + mod(xx - shift_w, w); });
  return take(x, idx, x.shape());
}

Tensor pad_replicate(const Tensor& x, Index top, Index bottom, Index left, Index right) {
  require_rank(x, 4, "pad_replicate");
  if (top < 0 || bottom < 0 || left < 0 || right < 0) throw InvalidArgument("pad_replicate: negative padding");
  if (top == 0 && bottom == 0 && left == 0 && right == 0) return x;
  const Index h = x.dim(2), w = x.dim(3), oh = h + top + bottom, ow = w + left + right;
  auto idx = spatial_map(x.dim(0) * x.dim(1), h, w, oh, ow, [&](Index y, Index xx) {
    return std::clamp<Index>(y - top, 0, h - 1) * w + std::clamp<Index>(xx - left, 0, w - 1);
  });
  return take(x, idx, {x.dim(0), x.dim(1), oh, ow});
}

Tensor crop(const Tensor& x, Index top, Index left, Index height, Index width) {
  require_rank(x, 4, "crop");
  const Index h = x.dim(2), w = x.dim(3);
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > h || left + width > w) {
    throw InvalidShape("crop window outside " + shape_str(x.shape()));
  }
  if (top == 0 && left == 0 && height == h && width == w) return x;
  auto idx = spatial_map(x.dim(0) * x.dim(1), h, w, height, width,
                         [&](Index y, Index xx) { return (y + top) * w + xx + left; });
  return take(x, idx, {x.dim(0), x.dim(1), height, width});
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  require_rank(x, 4, "upsample_nearest");
  const Index h = x.dim(2), w = x.dim(3), r = factor;
  auto idx = spatial_map(x.dim(0) * x.dim(1), h, w, h * r, w * r, [&](Index y, Index xx) { return (y / r) * w + xx / r; });
  return take(x, idx, {x.dim(0), x.dim(1), h * r, w * r});
}

Tensor avg_pool(const Tensor& x, int factor) {
  require_rank(x, 4, "avg_pool");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), r = factor;
  if (r < 1 || h % r || w % r) throw InvalidShape("avg_pool: extents not divisible by factor");
  const Index oh = h / r, ow = w / r;
  auto xd = x.data();
  std::vector<double> out(sz(n * c * oh * ow), 0.0);
  const double inv = 1.0 / static_cast<double>(r * r);
  for (Index p = 0; p < n * c; ++p)
    for (Index y = 0; y < h; ++y)
      for (Index xx = 0; xx < w; ++xx) out[sz((p * oh + y / r) * ow + xx / r)] += xd[sz((p * h + y) * w + xx)] * inv;
  return make_result({n, c, oh, ow}, std::move(out), {x}, [n, c, h, w, r, oh, ow, inv](std::span<const double> g, GradSink& sink) {
    auto gx = sink[0];
    if (gx.empty()) return;
    for (Index p = 0; p < n * c; ++p)
      for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < w; ++xx) gx[sz((p * h + y) * w + xx)] += g[sz((p * oh + y / r) * ow + xx / r)] * inv;
  });
}

Index round_up(Index v, Index m) { return ((v + m - 1) / m) * m; }

Tensor pad_to_multiple(const Tensor& x, Index m) {
  require_rank(x, 4, "pad_to_multiple");
  const Index h = x.dim(2), w = x.dim(3);
  return pad_replicate(x, 0, round_up(h, m) - h, 0, round_up(w, m) - w);
}

}  // namespace precodec
