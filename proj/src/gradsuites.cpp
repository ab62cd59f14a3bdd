#include <cmath>

#include "precodec/attention.hpp"
#include "precodec/gradcheck.hpp"
#include "precodec/ops.hpp"
#include "precodec/rarn.hpp"
#include "precodec/resample.hpp"
#include "precodec/synth.hpp"
#include "precodec/trainer.hpp"
#include "precodec/tvc.hpp"

// Inputs are drawn away from kinks (leaky_relu at 0, clamp bounds) so the
// central difference sees the same branch as the backward pass. round_st
// and round_values are excluded: their surrogate gradient is not the
// derivative of the forward function.
namespace precodec {
namespace {

Tensor rnd(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

// Random projection to a scalar, so every output element matters.
ScalarFn projected(std::function<Tensor(const std::vector<Tensor>&)> op, Tensor probe) {
  return [op = std::move(op), probe = std::move(probe)](const std::vector<Tensor>& in) { return sum(mul(op(in), probe)); };
}

using Results = std::vector<GradCheckResult>;

Results elementwise() {
  Results out;
  int seed = 100;
  for (const Shape& s : std::vector<Shape>{{1, 2, 3, 4}, {2, 3, 4, 4}}) {
    Rng rng(static_cast<std::uint64_t>(seed++));
    Tensor a = rnd(rng, s, -1.5, 1.5), b = rnd(rng, s, 0.5, 1.5), p = rnd(rng, s);
    Tensor c = rnd(rng, {1}, 0.5, 1.5);
    auto one = [&](const std::string& name, std::function<Tensor(const std::vector<Tensor>&)> op, std::vector<Tensor> in) {
      out.push_back(check_gradients(name + " " + shape_str(s), projected(std::move(op), p), in));
    };
    one("add", [](auto& in) { return add(in[0], in[1]); }, {a, b});
    one("sub", [](auto& in) { return sub(in[0], in[1]); }, {a, b});
    one("mul", [](auto& in) { return mul(in[0], in[1]); }, {a, b});
    one("mul_scalar_tensor", [](auto& in) { return mul(in[0], in[1]); }, {a, c});
    one("add_scalar", [](auto& in) { return add_scalar(in[0], 0.3); }, {a});
    one("mul_scalar", [](auto& in) { return mul_scalar(in[0], -1.7); }, {a});
    one("neg", [](auto& in) { return neg(in[0]); }, {a});
    one("square", [](auto& in) { return square(in[0]); }, {a});
    one("exp", [](auto& in) { return exp(in[0]); }, {a});
    one("log", [](auto& in) { return log(in[0]); }, {b});
    one("tanh", [](auto& in) { return tanh(in[0]); }, {a});
    one("sigmoid", [](auto& in) { return sigmoid(in[0]); }, {a});
    one("leaky_relu", [](auto& in) { return leaky_relu(in[0]); }, {b});
    one("leaky_relu_neg", [](auto& in) { return leaky_relu(neg(in[0])); }, {b});
    one("clamp", [](auto& in) { return clamp(in[0], 0.0, 2.0); }, {b});
    one("clamp_st", [](auto& in) { return clamp_st(in[0], 0.0, 2.0); }, {b});
    one("softmax_axis1", [](auto& in) { return softmax(in[0], 1); }, {a});
    one("softmax_axis3", [](auto& in) { return softmax(in[0], 3); }, {a});
  }
  return out;
}

Results reductions_and_linear() {
  Results out;
  Rng rng(200);
  Tensor a = rnd(rng, {2, 3, 4}), b = rnd(rng, {2, 3, 4});
  out.push_back(check_gradients("sum", [](const std::vector<Tensor>& in) { return sum(square(in[0])); }, {a}));
  out.push_back(check_gradients("mean", [](const std::vector<Tensor>& in) { return mean(mul(in[0], in[1])); }, {a, b}));
  out.push_back(check_gradients("mse", [](const std::vector<Tensor>& in) { return mse(in[0], in[1]); }, {a, b}));
  Tensor m = rnd(rng, {3, 4}), n = rnd(rng, {4, 5});
  out.push_back(check_gradients("matmul", [](const std::vector<Tensor>& in) { return sum(square(matmul(in[0], in[1]))); }, {m, n}));
  Tensor ba = rnd(rng, {2, 3, 4}), bb = rnd(rng, {2, 4, 5}), bt = rnd(rng, {2, 5, 4});
  out.push_back(check_gradients("bmm", [](const std::vector<Tensor>& in) { return sum(square(bmm(in[0], in[1]))); }, {ba, bb}));
  out.push_back(check_gradients("bmm_transposed", [](const std::vector<Tensor>& in) { return sum(square(bmm(in[0], in[1], true))); }, {ba, bt}));
  Tensor w = rnd(rng, {5, 4}), bias = rnd(rng, {5});
  out.push_back(check_gradients("linear", [](const std::vector<Tensor>& in) { return sum(square(linear(in[0], in[1], in[2]))); },
                                {ba, w, bias}));
  return out;
}

Results convolution() {
  Results out;
  Rng rng(300);
  Tensor x = rnd(rng, {2, 3, 6, 5}), w = rnd(rng, {4, 3, 3, 3}), b = rnd(rng, {4});
  for (int stride : {1, 2}) {
    Tensor probe = rnd(rng, conv2d(x, w, b, stride, 1).shape());
    out.push_back(check_gradients("conv2d stride " + std::to_string(stride),
                                  projected([stride](auto& in) { return conv2d(in[0], in[1], in[2], stride, 1); }, probe), {x, w, b}));
  }
  Tensor probe = rnd(rng, x.shape());
  out.push_back(check_gradients("bias_add", projected([](auto& in) { return bias_add(in[0], in[1]); }, probe), {x, rnd(rng, {3})}));
  return out;
}

Results structural() {
  Results out;
  Rng rng(400);
  Tensor x = rnd(rng, {1, 2, 4, 6}), y = rnd(rng, {1, 3, 4, 6});
  auto one = [&](const std::string& name, std::function<Tensor(const std::vector<Tensor>&)> op, std::vector<Tensor> in) {
    Tensor probe = rnd(rng, op(in).shape());
    out.push_back(check_gradients(name, projected(std::move(op), probe), in));
  };
  one("reshape", [](auto& in) { return reshape(in[0], {4, 12}); }, {x});
  one("permute", [](auto& in) { return permute(in[0], {0, 3, 1, 2}); }, {x});
  one("concat", [](auto& in) { return concat({in[0], in[1]}, 1); }, {x, y});
  one("slice", [](auto& in) { return slice(in[0], 3, 1, 4); }, {x});
  one("pixel_unshuffle", [](auto& in) { return pixel_unshuffle(in[0], 2); }, {x});
  one("pixel_shuffle", [](auto& in) { return pixel_shuffle(in[0], 2); }, {reshape(x, {1, 8, 2, 3})});
  one("roll", [](auto& in) { return roll(in[0], 1, -2); }, {x});
  one("pad_replicate", [](auto& in) { return pad_replicate(in[0], 1, 2, 2, 1); }, {x});
  one("crop", [](auto& in) { return crop(in[0], 1, 2, 2, 3); }, {x});
  one("upsample_nearest", [](auto& in) { return upsample_nearest(in[0], 2); }, {x});
  one("avg_pool", [](auto& in) { return avg_pool(in[0], 2); }, {x});
  one("pad_to_multiple", [](auto& in) { return pad_to_multiple(in[0], 5); }, {x});
  auto idx = std::make_shared<std::vector<Index>>(std::vector<Index>{3, 0, -1, 3, 7, 2});
  one("take", [idx](auto& in) { return take(in[0], idx, {6}); }, {reshape(slice(x, 3, 0, 1), {8})});
  return out;
}

AttentionWeights random_attention(Rng& rng, Index c_in, Index d, Index c_out, int heads, int window) {
  AttentionWeights w;
  w.qkv_weight = rnd(rng, {3 * d, c_in}, -0.5, 0.5);
  w.qkv_bias = rnd(rng, {3 * d}, -0.1, 0.1);
  w.proj_weight = rnd(rng, {c_out, d}, -0.5, 0.5);
  w.proj_bias = rnd(rng, {c_out}, -0.1, 0.1);
  if (window > 0) w.rel_bias = rnd(rng, {heads, (2 * Index(window) - 1) * (2 * Index(window) - 1)}, -0.3, 0.3);
  w.heads = heads;
  return w;
}

Results attention() {
  Results out;
  Rng rng(500);
  Tensor x = rnd(rng, {1, 4, 8, 8});
  AttentionWeights w = random_attention(rng, 4, 4, 3, 2, 4);
  Tensor probe = rnd(rng, {1, 3, 8, 8});
  for (int shift : {0, 2}) {
    ScalarFn f = [&, shift](const std::vector<Tensor>& in) {
      AttentionWeights ww{in[1], in[2], in[3], in[4], in[5], 2};
      return sum(mul(windowed_attention(in[0], 4, shift, ww), probe));
    };
    out.push_back(check_gradients("windowed_attention shift " + std::to_string(shift), f,
                                  {x, w.qkv_weight, w.qkv_bias, w.proj_weight, w.proj_bias, w.rel_bias}, {.probes_per_input = 12}));
  }
  ScalarFn g = [&](const std::vector<Tensor>& in) {
    AttentionWeights ww{in[1], in[2], in[3], in[4], Tensor(), 2};
    return sum(mul(global_attention(in[0], ww), probe));
  };
  out.push_back(check_gradients("global_attention", g, {x, w.qkv_weight, w.qkv_bias, w.proj_weight, w.proj_bias}, {.probes_per_input = 12}));
  return out;
}

Results resampling() {
  Results out;
  Rng rng(600);
  Tensor img = rnd(rng, {1, 2, 6, 6});
  for (auto [ho, wo] : std::vector<std::pair<Index, Index>>{{3, 5}, {9, 4}}) {
    const ScalePlan plan = make_plan(6, 6, ho, wo);
    Tensor probe = rnd(rng, {1, 2, ho, wo});
    for (Filter f : {Filter::kBicubic, Filter::kLanczos})
      out.push_back(check_gradients(std::string(f == Filter::kBicubic ? "bicubic" : "lanczos") + " resize 6x6->" + std::to_string(ho) +
                                        "x" + std::to_string(wo),
                                    projected([plan, f](auto& in) { return resize(in[0], plan, f); }, probe), {img}));
  }
  Tensor coords = rnd(rng, {1, 3, 4, 2}, -0.95, 0.95);
  out.push_back(check_gradients("grid_sample_bicubic (features, coords)",
                                projected([](auto& in) { return grid_sample_bicubic(in[0], in[1]); }, rnd(rng, {1, 2, 3, 4})),
                                {img, coords}));
  const ScalePlan plan = make_plan(6, 6, 5, 4);
  Tensor base = base_grid(plan);
  Tensor off = rnd(rng, {1, 2, 5, 4, 2}, -0.3, 0.3), w = rnd(rng, {1, 2, 2, 5, 4});
  out.push_back(check_gradients(
      "deformable_compensated_sample (features, offsets, weights)",
      projected([base](auto& in) { return deformable_compensated_sample(in[0], base, in[1], in[2]); }, rnd(rng, {1, 2, 5, 4})),
      {img, off, w}));
  Tensor flow = rnd(rng, {1, 2, 6, 6}, -1.3, 1.3);
  out.push_back(check_gradients("warp_bilinear", projected([flow](auto& in) { return warp_bilinear(in[0], flow); }, rnd(rng, {1, 2, 6, 6})),
                                {img}));
  return out;
}

Results rate_estimators() {
  Results out;
  Rng rng(700);
  Tensor z = rnd(rng, {1, 3, 3, 4}, -4, 4), ls = rnd(rng, {3}, -1, 1);
  out.push_back(check_gradients("logistic_bits", [](const std::vector<Tensor>& in) { return logistic_bits(in[0], in[1]); }, {z, ls}));
  RarnConfig cfg;
  cfg.feature_channels = 8;
  cfg.num_resblocks = 1;
  cfg.taps = 2;
  cfg.rate_latent_channels = 4;
  cfg.window = 4;
  cfg.mlp_hidden = 16;
  cfg.mlp_layers = 2;
  ParamSet p = init_rarn(cfg, 4);
  Tensor x = synthetic_image(2, 8, 8);
  ScalarFn f = [&](const std::vector<Tensor>& in) {
    ParamSet q = p;
    q.set("rate.enc1.weight", in[0]);
    q.set("rate.enc2.weight", in[1]);
    q.set("rate.log_scale", in[2]);
    Rng noise(99);
    return estimate_rate_features(x, q, {true, &noise}).bits;
  };
  out.push_back(check_gradients("rarn rate branch (train mode)", f,
                                {p.at("rate.enc1.weight"), p.at("rate.enc2.weight"), p.at("rate.log_scale")}, {.probes_per_input = 10}));
  return out;
}

TvcConfig toy_tvc() {
  TvcConfig c;
  c.window = 4;
  c.latent_channels = 8;
  c.num_coupling_blocks = 2;
  c.num_pre_attention_blocks = 1;
  c.pool = 2;
  c.heads = 1;
  c.init = TvcConfig::Init::kIdentity;
  return c;
}

ParamSet random_couplings(const TvcConfig& cfg, std::uint64_t seed, double sd) {
  ParamSet p = init_tvc(cfg, seed);
  Rng rng(seed + 1000);
  for (const auto& name : p.names())
    if (name.find(".s.weight") != std::string::npos || name.find(".t.weight") != std::string::npos ||
        name.find("attn.proj.weight") != std::string::npos)
      p.set(name, init_normal(rng, p.at(name).shape(), sd));
  return p;
}

// Content kept inside the output clamp.
Tensor mid_image(std::uint64_t seed, Index h, Index w) { return add_scalar(mul_scalar(synthetic_image(seed, h, w), 0.5), 0.25); }

Results tvc() {
  Results out;
  const TvcConfig cfg = toy_tvc();
  ParamSet p = random_couplings(cfg, 10, 0.1);
  Rng rng(800);
  Tensor h = rnd(rng, {1, 8, 8, 8});
  Tensor probe = rnd(rng, h.shape());
  for (int shift : {0, 2}) {
    ScalarFn f = [&, shift](const std::vector<Tensor>& in) {
      ParamSet q = p;
      q.set("inn0.s.weight", in[1]);
      q.set("inn0.t.weight", in[2]);
      Tensor log_det;
      Tensor y = coupling_forward(in[0], q, "inn0", cfg.window, shift, cfg.heads, &log_det);
      return add(sum(mul(y, probe)), log_det);
    };
    out.push_back(check_gradients("coupling block shift " + std::to_string(shift), f, {h, p.at("inn0.s.weight"), p.at("inn0.t.weight")},
                                  {.probes_per_input = 10}));
  }
  ScalarFn inv = [&](const std::vector<Tensor>& in) {
    ParamSet q = p;
    q.set("inn1.t.weight", in[1]);
    return sum(mul(coupling_inverse(in[0], q, "inn1", cfg.window, cfg.window / 2, cfg.heads), probe));
  };
  out.push_back(check_gradients("coupling inverse", inv, {h, p.at("inn1.t.weight")}, {.probes_per_input = 10}));

  Tensor y = mid_image(4, 8, 8);
  const std::vector<std::string> names{"inn0.s.weight", "inn1.t.weight", "quant.log_step", "prior.log_scale", "prior.log_gain",
                                       "embed.weight", "pre0.attn.proj.weight"};
  ScalarFn intra = [&](const std::vector<Tensor>& in) {
    ParamSet q = p;
    for (std::size_t i = 0; i < names.size(); ++i) q.set(names[i], in[i]);
    Rng noise(3);
    CodeResult r = intra_code(in.back(), q, cfg, {true, &noise});
    return add(mse(r.decoded, y), mul_scalar(r.bits, 1e-3));
  };
  std::vector<Tensor> in;
  for (const auto& n : names) in.push_back(p.at(n));
  in.push_back(y);
  out.push_back(check_gradients("tvc intra path (train mode)", intra, in, {.probes_per_input = 5}));

  Tensor a = mid_image(5, 8, 8), b = mid_image(6, 8, 8), c = mid_image(7, 8, 8);
  MotionField mp = MotionField::zeros(8, 8), mn = MotionField::zeros(8, 8);
  for (std::size_t i = 0; i < mp.dy.size(); ++i) {
    mp.dy[i] = 0.7;
    mp.dx[i] = -1.3;
    mn.dx[i] = 0.4;
  }
  ScalarFn inter = [&](const std::vector<Tensor>& v) {
    ParamSet q = p;
    q.set("fea.weight", v[2]);
    q.set("fusion.weight", v[3]);
    Rng noise(4);
    CodeResult r = inter_code({v[0], v[1], b, &mp, &mn}, q, cfg, {true, &noise});
    return add(mse(r.decoded, b), mul_scalar(r.bits, 1e-3));
  };
  out.push_back(check_gradients("tvc inter path with warp", inter, {a, c, p.at("fea.weight"), p.at("fusion.weight")}, {.probes_per_input = 8}));
  return out;
}

RarnConfig toy_rarn() {
  RarnConfig c;
  c.feature_channels = 8;
  c.num_resblocks = 1;
  c.taps = 2;
  c.rate_latent_channels = 4;
  c.window = 4;
  c.heads = 1;
  c.mlp_hidden = 16;
  c.mlp_layers = 2;
  return c;
}

ParamSet active_rarn(const RarnConfig& rc, std::uint64_t seed) {
  ParamSet rp = init_rarn(rc, seed);
  Rng r(seed + 1);
  for (const char* n : {"mlp.offset.weight", "mlp.weight.weight", "attn1.proj.weight"})
    rp.set(n, rnd(r, rp.at(n).shape(), -0.3, 0.3));
  // small output head keeps y off the straight-through clamp
  rp.set("out.weight", rnd(r, rp.at("out.weight").shape(), -0.05, 0.05));
  return rp;
}

Results rarn() {
  Results out;
  const RarnConfig rc = toy_rarn();
  ParamSet rp = active_rarn(rc, 11);
  const Tensor x = mid_image(8, 8, 8);
  const ScalePlan plan = make_plan(8, 8, 5, 5);
  Rng rng(900);
  Tensor probe = rnd(rng, {1, 3, 5, 5});
  const std::vector<std::string> names{"mlp.offset.weight", "mlp.weight.weight", "attn1.proj.weight", "head.weight", "rate.dec1.weight"};
  ScalarFn f = [&](const std::vector<Tensor>& in) {
    ParamSet q = rp;
    for (std::size_t i = 0; i < names.size(); ++i) q.set(names[i], in[i]);
    Rng noise(5);
    RarnOutput o = precode(x, plan, q, rc, {true, &noise});
    return add(sum(mul(o.y, probe)), mul_scalar(o.rate_bits, 0.01));
  };
  std::vector<Tensor> in;
  for (const auto& n : names) in.push_back(rp.at(n));
  out.push_back(check_gradients("rarn precode (train mode)", f, in, {.probes_per_input = 6}));
  return out;
}

Results rd_loss_end_to_end() {
  Results out;
  const RarnConfig rc = toy_rarn();
  const TvcConfig tc = toy_tvc();
  ParamSet rp = active_rarn(rc, 3);
  ParamSet tp = random_couplings(tc, 5, 0.05);
  const ParamSet frozen = tp.frozen();
  TrainConfig cfg;
  cfg.lambda = 0.05;
  const Tensor x = mid_image(9, 8, 8);
  const std::vector<std::string> names{"mlp.offset.weight", "head.weight", "rate.enc1.weight"};
  for (auto [plan, label] : std::vector<std::pair<ScalePlan, std::string>>{{make_plan(8, 8, 5, 5), "8x8->5x5"},
                                                                          {make_plan(8, 8, 4, 4), "8x8->4x4"}}) {
    ScalarFn f = [&, plan](const std::vector<Tensor>& in) {
      ParamSet q = rp;
      for (std::size_t i = 0; i < names.size(); ++i) q.set(names[i], in[i]);
      Rng noise(11);
      const Quantizer quant{true, &noise};
      RarnOutput o = precode(x, plan, q, rc, quant);
      CodeResult c = intra_code(o.y, frozen, tc, quant);
      return rd_loss(x, o.y, c.decoded, c.bits, o.rate_bits, cfg).L;
    };
    std::vector<Tensor> in;
    for (const auto& n : names) in.push_back(rp.at(n));
    out.push_back(check_gradients("rd_loss through frozen proxy " + label, f, in, {.probes_per_input = 4}));
  }
  return out;
}

}  // namespace

const std::vector<GradSuite>& gradient_suites() {
  static const std::vector<GradSuite> suites{
      {"elementwise", elementwise},
      {"reductions+linear", reductions_and_linear},
      {"convolution", convolution},
      {"structural", structural},
      {"attention", attention},
      {"resample", resampling},
      {"rate", rate_estimators},
      {"tvc", tvc},
      {"rarn", rarn},
      {"rd_loss", rd_loss_end_to_end},
  };
  return suites;
}

}  // namespace precodec
