#include "precodec/attention.hpp"

#include <Eigen/Core>

#include <cmath>
#include <memory>

#include "precodec/ops.hpp"

namespace precodec {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

std::size_t sz(Index v) { return static_cast<std::size_t>(v); }

constexpr double kMaskValue = -1e4;

// Swin-style region label of a shifted coordinate; tokens of one window
// attend to each other only when their labels agree on both axes.
int region(Index pos, Index extent, int window, int shift) {
  if (shift == 0) return 0;
  if (pos < extent - window) return 0;
  if (pos < extent - shift) return 1;
  return 2;
}

void check_window(const Tensor& x, int window, int shift) {
  if (x.rank() != 4) throw InvalidShape("windowed_attention: expected [N,C,H,W], got " + shape_str(x.shape()));
  if (window < 1) throw InvalidArgument("windowed_attention: window must be positive");
  if (x.dim(2) % window || x.dim(3) % window) {
    throw InvalidShape("windowed_attention: extents " + shape_str(x.shape()) + " not divisible by window " +
                       std::to_string(window));
  }
  if (shift != 0 && shift != window / 2) throw InvalidArgument("windowed_attention: shift must be 0 or window/2");
}

// Static description of the score offsets added inside every window.
struct ScoreLayout {
  Index windows = 1;                // distinct window positions (batch index b -> b % windows)
  std::shared_ptr<const std::vector<Index>> bias_index;  // [T*T] into one head's bias row
  Index bias_row = 0;                                     // bias entries per head
  std::shared_ptr<const std::vector<int>> labels;        // [windows*T] region labels, or null
};

// softmax(q k^T * scale + bias + mask) v per (window, head). Scores are
// recomputed in backward so memory stays linear in the token count.
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& rel_bias, int heads,
                      const ScoreLayout& layout) {
  const Index bh = q.dim(0), t = q.dim(1), hd = q.dim(2);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const bool has_bias = rel_bias.defined();

  auto scores_of = [=](Index i, const double* qp, const double* kp, const double* bp, RowMat& s) {
    s.noalias() = MapC(qp + i * t * hd, t, hd) * MapC(kp + i * t * hd, t, hd).transpose();
    s *= scale;
    const Index head = i % heads;
    const Index win = (i / heads) % layout.windows;
    if (has_bias) {
      const auto& idx = *layout.bias_index;
      for (Index a = 0; a < t * t; ++a) s.data()[a] += bp[head * layout.bias_row + idx[sz(a)]];
    }
    if (layout.labels) {
      const int* lab = layout.labels->data() + win * t;
      for (Index a = 0; a < t; ++a)
        for (Index b = 0; b < t; ++b)
          if (lab[a] != lab[b]) s(a, b) += kMaskValue;
    }
    for (Index a = 0; a < t; ++a) {
      auto row = s.row(a);
      const double mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      row /= row.sum();
    }
  };

  std::vector<double> out(sz(bh * t * hd));
  {
    RowMat s(t, t);
    const double* bp = has_bias ? rel_bias.data().data() : nullptr;
    for (Index i = 0; i < bh; ++i) {
      scores_of(i, q.data().data(), k.data().data(), bp, s);
      Map(out.data() + i * t * hd, t, hd).noalias() = s * MapC(v.data().data() + i * t * hd, t, hd);
    }
  }
  std::vector<Tensor> inputs{q, k, v};
  if (has_bias) inputs.push_back(rel_bias);
  return make_result(
      {bh, t, hd}, std::move(out), inputs,
      [q, k, v, rel_bias, has_bias, layout, bh, t, hd, scale, heads, scores_of](std::span<const double> g, GradSink& sink) {
        auto gq = sink[0];
        auto gk = sink[1];
        auto gv = sink[2];
        std::span<double> gb = has_bias ? sink[3] : std::span<double>{};
        RowMat p(t, t), dp(t, t);
        const double* qp = q.data().data();
        const double* kp = k.data().data();
        const double* vp = v.data().data();
        const double* bp = has_bias ? rel_bias.data().data() : nullptr;
        for (Index i = 0; i < bh; ++i) {
          scores_of(i, qp, kp, bp, p);
          MapC G(g.data() + i * t * hd, t, hd);
          if (!gv.empty()) Map(gv.data() + i * t * hd, t, hd).noalias() += p.transpose() * G;
          dp.noalias() = G * MapC(vp + i * t * hd, t, hd).transpose();
          // Softmax backward: ds = p * (dp - rowsum(dp * p)).
          for (Index a = 0; a < t; ++a) {
            const double dot = p.row(a).dot(dp.row(a));
            dp.row(a) = p.row(a).array() * (dp.row(a).array() - dot);
          }
          if (!gb.empty()) {
            const Index head = i % heads;
            const auto& idx = *layout.bias_index;
            for (Index a = 0; a < t * t; ++a) gb[sz(head * layout.bias_row + idx[sz(a)])] += dp.data()[a];
          }
          dp *= scale;
          if (!gq.empty()) Map(gq.data() + i * t * hd, t, hd).noalias() += dp * MapC(kp + i * t * hd, t, hd);
          if (!gk.empty()) Map(gk.data() + i * t * hd, t, hd).noalias() += dp.transpose() * MapC(qp + i * t * hd, t, hd);
        }
      });
}

// tokens[B,T,C_in] -> [B,T,C_out].
Tensor attend(const Tensor& tokens, const AttentionWeights& w, const ScoreLayout& layout) {
  const Index batch = tokens.dim(0), t = tokens.dim(1);
  if (w.qkv_weight.dim(0) % 3) throw InvalidShape("attention: qkv weight rows must be a multiple of 3");
  const Index d_all = w.qkv_weight.dim(0) / 3;
  const int heads = w.heads;
  if (heads < 1 || d_all % heads) throw InvalidShape("attention: channels not divisible by heads");
  const Index hd = d_all / heads;
  Tensor qkv = linear(tokens, w.qkv_weight, w.qkv_bias);  // [B,T,3D]

  auto split = [&](Index part) {
    auto idx = std::make_shared<std::vector<Index>>(sz(batch * heads * t * hd));
    Index o = 0;
    for (Index b = 0; b < batch; ++b)
      for (Index h = 0; h < heads; ++h)
        for (Index i = 0; i < t; ++i)
          for (Index e = 0; e < hd; ++e) (*idx)[sz(o++)] = (b * t + i) * 3 * d_all + part * d_all + h * hd + e;
    return take(qkv, idx, {batch * heads, t, hd});
  };
  Tensor out = attention_core(split(0), split(1), split(2), w.rel_bias, heads, layout);

  auto merge = std::make_shared<std::vector<Index>>(sz(batch * t * d_all));
  Index o = 0;
  for (Index b = 0; b < batch; ++b)
    for (Index i = 0; i < t; ++i)
      for (Index h = 0; h < heads; ++h)
        for (Index e = 0; e < hd; ++e) (*merge)[sz(o++)] = ((b * heads + h) * t + i) * hd + e;
  return linear(take(out, merge, {batch, t, d_all}), w.proj_weight, w.proj_bias);
}

}  // namespace

Tensor windowed_attention(const Tensor& x, int window, int shift, const AttentionWeights& w) {
  check_window(x, window, shift);
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3), k = window;
  const Index nwh = h / k, nww = wd / k, nw = nwh * nww, t = k * k;
  const Index batch = n * nw;

  // Window partition of the shifted map: shifted(y) = x((y + shift) mod H).
  auto part = std::make_shared<std::vector<Index>>(sz(batch * t * c));
  Index o = 0;
  for (Index b = 0; b < n; ++b)
    for (Index wy = 0; wy < nwh; ++wy)
      for (Index wx = 0; wx < nww; ++wx)
        for (Index i = 0; i < t; ++i) {
          const Index y = (wy * k + i / k + shift) % h;
          const Index xx = (wx * k + i % k + shift) % wd;
          for (Index ch = 0; ch < c; ++ch) (*part)[sz(o++)] = ((b * c + ch) * h + y) * wd + xx;
        }
  Tensor tokens = take(x, part, {batch, t, c});

  ScoreLayout layout;
  layout.windows = nw;
  if (w.rel_bias.defined()) {
    const Index span = 2 * k - 1;
    if (w.rel_bias.numel() != w.heads * span * span) throw InvalidShape("windowed_attention: rel_bias size mismatch");
    auto bi = std::make_shared<std::vector<Index>>(sz(t * t));
    for (Index i = 0; i < t; ++i)
      for (Index j = 0; j < t; ++j) (*bi)[sz(i * t + j)] = (i / k - j / k + k - 1) * span + (i % k - j % k + k - 1);
    layout.bias_index = bi;
    layout.bias_row = span * span;
  }
  if (shift != 0) {
    auto labels = std::make_shared<std::vector<int>>(sz(nw * t));
    for (Index win = 0; win < nw; ++win) {
      const Index wy = win / nww, wx = win % nww;
      for (Index i = 0; i < t; ++i)
        (*labels)[sz(win * t + i)] =
            region(wy * k + i / k, h, window, shift) * 3 + region(wx * k + i % k, wd, window, shift);
    }
    layout.labels = labels;
  }

  Tensor out_tokens = attend(tokens, w, layout);  // [batch, t, C_out]
  const Index c_out = out_tokens.dim(2);

  // Reverse the partition and the shift in one gather.
  auto rev = std::make_shared<std::vector<Index>>(sz(n * c_out * h * wd));
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c_out; ++ch)
      for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < wd; ++xx) {
          const Index ys = (y - shift + h) % h, xs = (xx - shift + wd) % wd;
          const Index win = (ys / k) * nww + xs / k;
          const Index i = (ys % k) * k + xs % k;
          (*rev)[sz(((b * c_out + ch) * h + y) * wd + xx)] = ((b * nw + win) * t + i) * c_out + ch;
        }
  return take(out_tokens, rev, {n, c_out, h, wd});
}

Tensor global_attention(const Tensor& x, const AttentionWeights& w) {
  if (x.rank() != 4) throw InvalidShape("global_attention: expected [N,C,H,W]");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor tokens = permute(reshape(x, {n, c, hw}), {0, 2, 1});
  AttentionWeights plain = w;
  plain.rel_bias = Tensor();
  Tensor out = attend(tokens, plain, ScoreLayout{});
  const Index c_out = out.dim(2);
  return reshape(permute(out, {0, 2, 1}), {n, c_out, x.dim(2), x.dim(3)});
}

std::vector<std::vector<Index>> attention_reach(Index height, Index width, int window, int shift) {
  const Index k = window;
  if (height % k || width % k) throw InvalidShape("attention_reach: extents not divisible by window");
  std::vector<std::vector<Index>> reach(sz(height * width));
  for (Index ys = 0; ys < height; ++ys)
    for (Index xs = 0; xs < width; ++xs) {
      const Index y = (ys + shift) % height, x = (xs + shift) % width;
      const int li = region(ys, height, window, shift) * 3 + region(xs, width, window, shift);
      auto& r = reach[sz(y * width + x)];
      const Index y0 = (ys / k) * k, x0 = (xs / k) * k;
      for (Index a = y0; a < y0 + k; ++a)
        for (Index b = x0; b < x0 + k; ++b) {
          const int lj = region(a, height, window, shift) * 3 + region(b, width, window, shift);
          if (li == lj) r.push_back(((a + shift) % height) * width + (b + shift) % width);
        }
    }
  return reach;
}

}  // namespace precodec
