#include "precodec/tvc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <tuple>

#include "precodec/attention.hpp"
#include "precodec/nn.hpp"
#include "precodec/ops.hpp"
#include "precodec/resample.hpp"

namespace precodec {

void TvcConfig::validate() const {
  if (window < 2 || window % 2 != 0) throw ConfigError("tvc: window must be even and >= 2");
  if (gop != 3) throw ConfigError("tvc: gop must be 3");
  if (latent_channels < 2 || latent_channels % 2 != 0) throw ConfigError("tvc: latent_channels must be even and >= 2");
  if (num_coupling_blocks < 1 || num_pre_attention_blocks < 0) throw ConfigError("tvc: block counts out of range");
  if (!(quant_step > 0.0)) throw ConfigError("tvc: quant_step must be positive");
  if (pool < 1 || window % pool != 0) throw ConfigError("tvc: pool must divide window");
  if (heads < 1) throw ConfigError("tvc: heads must be >= 1");
  if (!(inter_gain > 0.0)) throw ConfigError("tvc: inter_gain must be positive");
}

namespace {

std::string pre_name(Index b) { return "pre" + std::to_string(b); }
std::string inn_name(Index b) { return "inn" + std::to_string(b); }
int block_shift(Index b, int window) { return b % 2 == 0 ? 0 : window / 2; }

// Copies the first three channels (3x3 centre tap) in each direction.
Tensor identity_conv(Index out_c, Index in_c, Index k, double gain = 1.0) {
  std::vector<double> w(static_cast<std::size_t>(out_c * in_c * k * k), 0.0);
  for (Index i = 0; i < std::min(out_c, in_c); ++i)
    w[static_cast<std::size_t>(((i * in_c + i) * k + k / 2) * k + k / 2)] = gain;
  return Tensor::from({out_c, in_c, k, k}, std::move(w));
}

// Identity-mode analysis: channels 0-2 carry the centered planes, the rest
// pixel differences (luma first), so the code length grows with detail the
// way a transform coder's does. Channels past the bank stay zero.
void identity_analysis(ParamSet& p, const std::string& name, Index l) {
  struct Tap {
    Index in;
    int dy, dx;
  };
  const std::vector<std::vector<Tap>> bank = {
      {{0, 0, -1}},  {{0, -1, 0}},  {{1, 0, -1}}, {{2, 0, -1}},
      {{0, -1, -1}}, {{0, -1, 1}},  {{1, -1, 0}}, {{2, -1, 0}},
  };
  std::vector<double> w(static_cast<std::size_t>(l * 3 * 9), 0.0), b(static_cast<std::size_t>(l), 0.0);
  auto at = [&](Index o, Index i, int dy, int dx) -> double& {
    return w[static_cast<std::size_t>(((o * 3 + i) * 3 + (dy + 1)) * 3 + (dx + 1))];
  };
  for (Index c = 0; c < std::min<Index>(3, l); ++c) {
    at(c, c, 0, 0) = 1.0;
    b[static_cast<std::size_t>(c)] = -0.5;
  }
  for (Index c = 3; c < l && c - 3 < static_cast<Index>(bank.size()); ++c)
    for (const Tap& t : bank[static_cast<std::size_t>(c - 3)]) {
      at(c, t.in, 0, 0) += 1.0;
      at(c, t.in, t.dy, t.dx) -= 1.0;
    }
  p.set(name + ".weight", Tensor::from({l, 3, 3, 3}, std::move(w)));
  p.set(name + ".bias", Tensor::from({l}, std::move(b)));
}

}  // namespace

ParamSet init_tvc(const TvcConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamSet p;
  const Index l = cfg.latent_channels, half = l / 2;
  const bool ident = cfg.init == TvcConfig::Init::kIdentity;
  nn::add_conv(p, rng, "embed", l, 3, 3);
  nn::add_conv(p, rng, "synth", 3, l, 3);
  nn::add_conv(p, rng, "fea", l, 3, 3);
  if (ident) {
    identity_analysis(p, "embed", l);
    identity_analysis(p, "fea", l);
    p.set("synth.weight", identity_conv(3, l, 3));
    p.set("synth.bias", Tensor::full({3}, 0.5));
  }
  for (Index b = 0; b < cfg.num_pre_attention_blocks; ++b) {
    nn::add_conv(p, rng, pre_name(b) + ".conv1", l, l, 3);
    nn::add_conv(p, rng, pre_name(b) + ".conv2", l, l, 3, true);
    nn::add_attention(p, rng, pre_name(b) + ".attn", l, l, l, 0, nn::heads_for(l, cfg.heads), true);
  }
  for (Index b = 0; b < cfg.num_coupling_blocks; ++b) {
    const std::string n = inn_name(b);
    nn::add_conv(p, rng, n + ".in", half, half, 1);
    nn::add_attention(p, rng, n + ".attn", half, half, half, cfg.window, nn::heads_for(half, cfg.heads), false);
    nn::add_conv(p, rng, n + ".s", half, half, 3, true);
    nn::add_conv(p, rng, n + ".t", half, half, 3, true);
  }
  p.add("quant.log_step", Tensor::scalar(std::log(cfg.quant_step)));
  p.add("prior.log_scale", Tensor::zeros({l}));
  // code length -> codec bits
  p.add("prior.log_gain", Tensor::scalar(0.0));
  // Inter path.
  nn::add_conv(p, rng, "fusion", l, 2 * l, 1);
  nn::add_conv(p, rng, "residual", l, 2 * l, 1);
  nn::add_conv(p, rng, "merge", l, l, 1);
  if (ident) {
    std::vector<double> fu(static_cast<std::size_t>(l * 2 * l), 0.0), re(fu.size(), 0.0), me(static_cast<std::size_t>(l * l), 0.0);
    for (Index i = 0; i < l; ++i) {
      fu[static_cast<std::size_t>(i * 2 * l + i)] = 0.5;
      fu[static_cast<std::size_t>(i * 2 * l + l + i)] = 0.5;
      re[static_cast<std::size_t>(i * 2 * l + i)] = cfg.inter_gain;
      re[static_cast<std::size_t>(i * 2 * l + l + i)] = -cfg.inter_gain;
      me[static_cast<std::size_t>(i * l + i)] = 1.0 / cfg.inter_gain;
    }
    p.set("fusion.weight", Tensor::from({l, 2 * l, 1, 1}, fu));
    p.set("residual.weight", Tensor::from({l, 2 * l, 1, 1}, re));
    p.set("merge.weight", Tensor::from({l, l, 1, 1}, me));
  }
  return p;
}

void check_tvc_params(const TvcConfig& cfg, const ParamSet& params) {
  const ParamSet ref = init_tvc(cfg, 0);
  if (ref.size() != params.size())
    throw ModelError("tvc checkpoint has " + std::to_string(params.size()) + " tensors, config expects " +
                     std::to_string(ref.size()));
  for (const auto& [name, t] : ref.items()) {
    if (!params.contains(name)) throw ModelError("tvc checkpoint lacks " + name);
    if (params.at(name).shape() != t.shape()) throw ModelError("tvc tensor " + name + " has the wrong shape");
  }
}

namespace {

struct Subnet {
  Tensor s, t;
};

Subnet subnet(const Tensor& h1, const ParamSet& p, const std::string& prefix, int window, int shift, int heads) {
  Tensor u = nn::conv(p, prefix + ".in", h1);
  u = add(u, windowed_attention(u, window, shift, nn::attention(p, prefix + ".attn", nn::heads_for(h1.dim(1), heads))));
  u = leaky_relu(u);
  return {clamp(nn::conv(p, prefix + ".s", u), -2.0, 2.0), nn::conv(p, prefix + ".t", u)};
}

void require_even(const Tensor& h) {
  if (h.rank() != 4 || h.dim(1) % 2 != 0) throw InvalidShape("coupling needs an even channel count, got " + shape_str(h.shape()));
}

Tensor swap_halves(const Tensor& h) {
  const Index half = h.dim(1) / 2;
  return concat({slice(h, 1, half, half), slice(h, 1, 0, half)}, 1);
}

}  // namespace

Tensor coupling_forward(const Tensor& h, const ParamSet& p, const std::string& prefix, int window, int shift, int heads,
                        Tensor* log_det) {
  require_even(h);
  const Index half = h.dim(1) / 2;
  Tensor h1 = slice(h, 1, 0, half), h2 = slice(h, 1, half, half);
  Subnet st = subnet(h1, p, prefix, window, shift, heads);
  if (log_det != nullptr) *log_det = sum(st.s);
  return concat({h1, add(mul(h2, exp(st.s)), st.t)}, 1);
}

Tensor coupling_inverse(const Tensor& h, const ParamSet& p, const std::string& prefix, int window, int shift, int heads) {
  require_even(h);
  const Index half = h.dim(1) / 2;
  Tensor h1 = slice(h, 1, 0, half), h2 = slice(h, 1, half, half);
  Subnet st = subnet(h1, p, prefix, window, shift, heads);
  return concat({h1, mul(sub(h2, st.t), exp(neg(st.s)))}, 1);
}

Tensor inn_forward(const Tensor& h, const ParamSet& p, const TvcConfig& cfg) {
  Tensor x = h;
  for (Index b = 0; b < cfg.num_coupling_blocks; ++b)
    x = swap_halves(coupling_forward(x, p, inn_name(b), cfg.window, block_shift(b, cfg.window), cfg.heads));
  return x;
}

Tensor inn_inverse(const Tensor& h, const ParamSet& p, const TvcConfig& cfg) {
  Tensor x = h;
  for (Index b = cfg.num_coupling_blocks - 1; b >= 0; --b)
    x = coupling_inverse(swap_halves(x), p, inn_name(b), cfg.window, block_shift(b, cfg.window), cfg.heads);
  return x;
}

Tensor pre_attention(const Tensor& y, const ParamSet& p, const TvcConfig& cfg) {
  Tensor h = nn::conv(p, "embed", y);
  const int heads = nn::heads_for(cfg.latent_channels, cfg.heads);
  for (Index b = 0; b < cfg.num_pre_attention_blocks; ++b) {
    const std::string n = pre_name(b);
    h = add(h, nn::conv(p, n + ".conv2", leaky_relu(nn::conv(p, n + ".conv1", h))));
    Tensor g = global_attention(avg_pool(h, cfg.pool), nn::attention(p, n + ".attn", heads));
    h = add(h, upsample_nearest(g, cfg.pool));
  }
  return h;
}

namespace {

struct Coded {
  Tensor features;
  Tensor bits;
  Tensor latent;
};

// INN -> scale by 1/step -> quantize -> rate -> rescale -> INN^-1.
Coded code_features(const Tensor& h, const ParamSet& p, const TvcConfig& cfg, const Quantizer& quant) {
  const Tensor& log_step = p.at("quant.log_step");
  Tensor u = inn_forward(h, p, cfg);
  Tensor w = quant.apply(mul(u, exp(neg(log_step))));
  Tensor bits = mul(logistic_bits(w, p.at("prior.log_scale")), exp(p.at("prior.log_gain")));
  return {inn_inverse(mul(w, exp(log_step)), p, cfg), bits, w};
}

void require_frame_tensor(const Tensor& y, const char* what) {
  if (y.rank() != 4 || y.dim(0) != 1 || y.dim(1) != 3)
    throw InvalidShape(std::string(what) + " expects [1,3,H,W], got " + shape_str(y.shape()));
}

}  // namespace

Tensor synthesize(const Tensor& features, const ParamSet& p, Index height, Index width) {
  return clamp_st(crop(nn::conv(p, "synth", features), 0, 0, height, width), 0.0, 1.0);
}

CodeResult intra_code(const Tensor& y, const ParamSet& p, const TvcConfig& cfg, const Quantizer& quant) {
  require_frame_tensor(y, "intra_code");
  Coded c = code_features(pre_attention(pad_to_multiple(y, cfg.window), p, cfg), p, cfg, quant);
  return {synthesize(c.features, p, y.dim(2), y.dim(3)), c.bits, c.latent};
}

Tensor MotionField::as_tensor() const {
  std::vector<double> v(dy);
  v.insert(v.end(), dx.begin(), dx.end());
  return Tensor::from({1, 2, height, width}, std::move(v));
}

MotionField MotionField::zeros(int height, int width) {
  MotionField m;
  m.height = height;
  m.width = width;
  m.dy.assign(static_cast<std::size_t>(height) * width, 0.0);
  m.dx = m.dy;
  return m;
}

namespace {

MotionField block_match(const std::uint8_t* ref, const std::uint8_t* cur, int h, int w, int range, int block) {
  if (range < 0 || block < 1) throw InvalidArgument("motion search needs range >= 0 and block >= 1");
  // Candidates in tie-break order; a later candidate only wins on a strictly
  // smaller SAD.
  std::vector<std::pair<int, int>> cands;
  for (int dy = -range; dy <= range; ++dy)
    for (int dx = -range; dx <= range; ++dx) cands.emplace_back(dy, dx);
  std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
    auto key = [](const std::pair<int, int>& m) {
      return std::make_tuple(std::abs(m.first), std::abs(m.second), m.first < 0 ? 0 : 1, m.second < 0 ? 0 : 1);
    };
    return key(a) < key(b);
  });
  MotionField mf = MotionField::zeros(h, w);
  for (int by = 0; by < h; by += block)
    for (int bx = 0; bx < w; bx += block) {
      const int ey = std::min(by + block, h), ex = std::min(bx + block, w);
      long best = -1;
      std::pair<int, int> best_m{0, 0};
      for (const auto& [dy, dx] : cands) {
        long sad = 0;
        for (int y = by; y < ey && (best < 0 || sad < best); ++y) {
          const int ry = std::clamp(y - dy, 0, h - 1);
          for (int x = bx; x < ex; ++x) {
            const int rx = std::clamp(x - dx, 0, w - 1);
            sad += std::abs(static_cast<int>(cur[y * w + x]) - static_cast<int>(ref[ry * w + rx]));
          }
        }
        if (best < 0 || sad < best) {
          best = sad;
          best_m = {dy, dx};
        }
      }
      for (int y = by; y < ey; ++y)
        for (int x = bx; x < ex; ++x) {
          mf.dy[static_cast<std::size_t>(y * w + x)] = best_m.first;
          mf.dx[static_cast<std::size_t>(y * w + x)] = best_m.second;
        }
    }
  return mf;
}

std::vector<std::uint8_t> luma_bytes(const Tensor& t) {
  if (t.rank() != 4 || t.dim(0) != 1) throw InvalidShape("motion estimation expects [1,C,H,W]");
  const Index n = t.dim(2) * t.dim(3);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = quantize_sample(t[i]);
  return out;
}

}  // namespace

MotionField estimate_motion(const Frame& ref, const Frame& cur, int search_range, int block) {
  ref.validate();
  cur.validate();
  if (ref.width != cur.width || ref.height != cur.height) throw InvalidShape("motion estimation frames differ in size");
  return block_match(ref.y.data(), cur.y.data(), cur.height, cur.width, search_range, block);
}

MotionField estimate_motion(const Tensor& ref, const Tensor& cur, int search_range, int block) {
  if (ref.shape() != cur.shape()) throw InvalidShape("motion estimation tensors differ in shape");
  const auto r = luma_bytes(ref), c = luma_bytes(cur);
  return block_match(r.data(), c.data(), static_cast<int>(cur.dim(2)), static_cast<int>(cur.dim(3)), search_range, block);
}

Tensor inter_prediction(const Tensor& prev, const Tensor& next, const MotionField& mp, const MotionField& mn,
                        const ParamSet& p) {
  Tensor wp = warp_bilinear(nn::conv(p, "fea", prev), mp.as_tensor());
  Tensor wn = warp_bilinear(nn::conv(p, "fea", next), mn.as_tensor());
  return nn::conv(p, "fusion", concat({wp, wn}, 1));
}

CodeResult inter_code(const InterInputs& in, const ParamSet& p, const TvcConfig& cfg, const Quantizer& quant) {
  require_frame_tensor(in.current, "inter_code");
  if (in.prev_decoded.shape() != in.current.shape() || in.next_decoded.shape() != in.current.shape())
    throw InvalidShape("inter_code frames must share one shape");
  const Index h = in.current.dim(2), w = in.current.dim(3);
  MotionField mp = in.motion_prev ? *in.motion_prev : estimate_motion(in.prev_decoded, in.current, in.search_range, in.block);
  MotionField mn = in.motion_next ? *in.motion_next : estimate_motion(in.next_decoded, in.current, in.search_range, in.block);
  if (mp.height != h || mp.width != w || mn.height != h || mn.width != w) throw InvalidShape("motion field size mismatch");
  Tensor pred = inter_prediction(in.prev_decoded, in.next_decoded, mp, mn, p);
  if (!cfg.residual) return {synthesize(pred, p, h, w), Tensor::scalar(0.0), Tensor()};
  // Conditional residual: a conv over the current features and the
  // prediction rather than their difference.
  Tensor r = nn::conv(p, "residual", concat({nn::conv(p, "fea", in.current), pred}, 1));
  Coded c = code_features(pad_to_multiple(r, cfg.window), p, cfg, quant);
  Tensor recon = add(pred, nn::conv(p, "merge", crop(c.features, 0, 0, h, w)));
  return {synthesize(recon, p, h, w), c.bits, c.latent};
}

GopResult code_gop(const std::vector<Tensor>& frames, const ParamSet& p, const TvcConfig& cfg, const Quantizer& quant) {
  if (static_cast<Index>(frames.size()) != cfg.gop)
    throw InvalidArgument("code_gop needs exactly 3 frames, got " + std::to_string(frames.size()));
  CodeResult f0 = intra_code(frames[0], p, cfg, quant);
  CodeResult f2 = intra_code(frames[2], p, cfg, quant);
  // Gradients reach the references through the warp; motion is searched on
  // their values only.
  InterInputs in{f0.decoded, f2.decoded, frames[1]};
  CodeResult f1 = inter_code(in, p, cfg, quant);
  GopResult g;
  g.decoded = {f0.decoded, f1.decoded, f2.decoded};
  g.bits = {f0.bits, f1.bits, f2.bits};
  g.latents = {f0.latent, f1.latent, f2.latent};
  g.total_bits = add(add(f0.bits, f1.bits), f2.bits);
  return g;
}

}  // namespace precodec
