#include <cmath>

#include "doctest.h"
#include "precodec/gradcheck.hpp"
#include "precodec/nn.hpp"
#include "precodec/ops.hpp"
#include "precodec/rarn.hpp"
#include "precodec/synth.hpp"
#include "unit/test_util.hpp"

using namespace precodec;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

RarnConfig toy() {
  RarnConfig c;
  c.feature_channels = 8;
  c.num_resblocks = 1;
  c.taps = 2;
  c.rate_latent_channels = 4;
  c.window = 4;
  c.mlp_hidden = 16;
  c.mlp_layers = 2;
  return c;
}

// Replaces every tensor whose name starts with `prefix` by a random one.
void randomize(ParamSet& p, const std::string& prefix, std::uint64_t seed, double scale = 0.2) {
  Rng rng(seed);
  for (const auto& name : p.names())
    if (name.rfind(prefix, 0) == 0) p.set(name, random_tensor(rng, p.at(name).shape(), -scale, scale));
}

}  // namespace

TEST_CASE("logistic pmf closed form and normalization") {
  const double p0 = logistic_pmf(0.0, 1.0);
  const double sig = 1.0 / (1.0 + std::exp(-0.5));
  CHECK(std::abs(p0 - (2.0 * sig - 1.0)) < 1e-15);
  CHECK(std::abs(-std::log2(p0) - 2.0296254) < 1e-6);
  // The tail beyond |n| = 50.5 holds 2*sigmoid(-50.5/s), which exceeds 1e-3
  // once s > 6.6, so the widest prior needs more terms.
  for (double s : {0.1, 0.3, 1.0, 3.0, 6.5, 10.0}) {
    const int range = s > 6.6 ? 80 : 50;
    double total = 0;
    for (int n = -range; n <= range; ++n) total += logistic_pmf(n, s);
    CAPTURE(s);
    CHECK(total >= 0.999);
    CHECK(total <= 1.0 + 1e-12);
  }
  CHECK(logistic_pmf(3.0, 0.7) == logistic_pmf(-3.0, 0.7));
}

TEST_CASE("logistic bits gradient") {
  Rng rng(1);
  for (Shape s : {Shape{1, 2, 3, 3}, Shape{1, 3, 2, 5}, Shape{2, 1, 4, 4}}) {
    Tensor z = random_tensor(rng, s, -4, 4);
    Tensor ls = random_tensor(rng, {s[1]}, -1, 1);
    CHECK(check_gradients("logistic_bits", [](const std::vector<Tensor>& in) { return logistic_bits(in[0], in[1]); }, {z, ls})
              .max_rel_error < 1e-6);
  }
}

TEST_CASE("zero latent in eval mode costs the closed-form rate") {
  RarnConfig cfg = toy();
  ParamSet p = init_rarn(cfg, 3);
  p.set("rate.enc2.weight", Tensor::zeros(p.at("rate.enc2.weight").shape()));
  Tensor x = synthetic_image(1, 8, 8);
  RateFeatures r = estimate_rate_features(x, p, {});
  const double expect = 8.0 * 8.0 / 16.0 * 4 * -std::log2(logistic_pmf(0, 1));
  CHECK(std::abs(r.bits.item() - expect) < 1e-9);
  CHECK(r.rate_map.shape() == Shape{1, 4, 2, 2});
}

TEST_CASE("training-mode rate gradient with frozen noise") {
  RarnConfig cfg = toy();
  ParamSet p = init_rarn(cfg, 4);
  Tensor x = synthetic_image(2, 8, 8);
  auto f = [&](const std::vector<Tensor>& in) {
    ParamSet q = p;
    q.set("rate.enc1.weight", in[0]);
    q.set("rate.enc2.weight", in[1]);
    q.set("rate.log_scale", in[2]);
    Rng noise(99);
    return estimate_rate_features(x, q, {true, &noise}).bits;
  };
  auto r = check_gradients("rate", f, {p.at("rate.enc1.weight"), p.at("rate.enc2.weight"), p.at("rate.log_scale")},
                           {.probes_per_input = 10});
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("init is deterministic with zeroed heads") {
  RarnConfig cfg = toy();
  CHECK(init_rarn(cfg, 5).bitwise_equal(init_rarn(cfg, 5)));
  CHECK_FALSE(init_rarn(cfg, 5).bitwise_equal(init_rarn(cfg, 6)));
  ParamSet p = init_rarn(cfg, 5);
  for (const char* n : {"mlp.offset.weight", "mlp.offset.bias", "mlp.weight.weight", "mlp.weight.bias", "out.weight"})
    for (double v : p.at(n).to_vector()) CHECK(v == 0.0);
}

TEST_CASE("parameter counts") {
  RarnConfig full;
  RarnConfig light = full;
  light.lightweight = true;
  const Index nf = init_rarn(full, 1).count(), nl = init_rarn(light, 1).count();
  CHECK(nf >= 1000000);
  CHECK(nf <= 12000000);
  CHECK(nl < nf);
  CHECK(infer_rarn_config(init_rarn(full, 1)).mlp_hidden == full.mlp_hidden);
  CHECK(infer_rarn_config(init_rarn(light, 1)).lightweight);
}

TEST_CASE("identity scale with zeroed compensation returns the input") {
  RarnConfig cfg = toy();
  ParamSet p = init_rarn(cfg, 7);
  Tensor x = synthetic_image(3, 12, 10);
  RarnOutput out = precode(x, make_plan(12, 10, 12, 10), p, cfg);
  CHECK(max_abs_diff(out.y, x) < 1e-4);
}

TEST_CASE("zero heads reduce to the sampled attention features") {
  RarnConfig cfg = toy();
  ParamSet p = init_rarn(cfg, 8);
  randomize(p, "out.", 1);
  randomize(p, "attn0.proj", 2);
  randomize(p, "res0.conv2", 3, 0.05);
  Tensor x = synthetic_image(4, 16, 16);
  for (auto plan : {make_plan(16, 16, 8, 8), make_plan(16, 16, 7, 11)}) {
    RarnOutput out = precode(x, plan, p, cfg);
    Tensor expect = clamp_st(add(bicubic_resize(x, plan), nn::conv(p, "out", grid_sample_bicubic(out.features, base_grid(plan)))), 0, 1);
    CHECK(max_abs_diff(out.y, expect) < 1e-12);
    // Lightweight path on the shared tensors gives the same answer.
    RarnConfig lc = cfg;
    lc.lightweight = true;
    CHECK(max_abs_diff(precode(x, plan, p, lc).y, out.y) == 0.0);
  }
}

TEST_CASE("one parameter set serves arbitrary ratios") {
  RarnConfig cfg = toy();
  ParamSet p = init_rarn(cfg, 9);
  randomize(p, "mlp.", 4, 0.3);
  randomize(p, "out.", 5);
  Tensor x = synthetic_image(5, 20, 20);
  RarnOutput a = precode(x, plan_for_scale(20, 20, 2.0), p, cfg);
  RarnOutput b = precode(x, plan_for_scale(20, 20, 2.5), p, cfg);
  CHECK(a.y.shape() == Shape{1, 3, 10, 10});
  CHECK(b.y.shape() == Shape{1, 3, 8, 8});
  Tensor small = synthetic_image(6, 9, 7);
  for (Index ho = 1; ho <= 9; ++ho) {
    RarnOutput o = precode(small, make_plan(9, 7, ho, std::max<Index>(1, ho * 7 / 9)), p, cfg);
    CHECK(o.y.dim(2) == ho);
    for (double v : o.y.to_vector()) CHECK((v >= 0.0 && v <= 1.0));
  }
  CHECK_THROWS_AS(precode(x, make_plan(16, 20, 8, 10), p, cfg), InvalidShape);
}

TEST_CASE("eval mode is deterministic") {
  RarnConfig cfg = toy();
  ParamSet p = init_rarn(cfg, 10);
  randomize(p, "mlp.", 6, 0.3);
  Tensor x = synthetic_image(7, 12, 12);
  const ScalePlan plan = plan_for_scale(12, 12, 1.5);
  CHECK(precode(x, plan, p, cfg).y.to_vector() == precode(x, plan, p, cfg).y.to_vector());
}

TEST_CASE("precode gradient through compensation heads") {
  RarnConfig cfg = toy();
  ParamSet p = init_rarn(cfg, 11);
  randomize(p, "mlp.", 7, 0.3);
  randomize(p, "out.", 8, 0.3);
  randomize(p, "attn1.proj", 9, 0.3);
  Tensor x = mul_scalar(add_scalar(synthetic_image(8, 8, 8), -0.5), 0.5);
  x = add_scalar(x, 0.5);
  const ScalePlan plan = make_plan(8, 8, 5, 5);
  Tensor probe = random_tensor(*std::make_unique<Rng>(3), {1, 3, 5, 5});
  const std::vector<std::string> names{"mlp.offset.weight", "mlp.weight.weight", "attn1.proj.weight", "head.weight", "rate.dec1.weight"};
  auto f = [&](const std::vector<Tensor>& in) {
    ParamSet q = p;
    for (std::size_t i = 0; i < names.size(); ++i) q.set(names[i], in[i]);
    Rng noise(5);
    RarnOutput o = precode(x, plan, q, cfg, {true, &noise});
    return add(sum(mul(o.y, probe)), mul_scalar(o.rate_bits, 0.01));
  };
  std::vector<Tensor> in;
  for (const auto& n : names) in.push_back(p.at(n));
  CHECK(check_gradients("precode", f, in, {.probes_per_input = 6}).max_rel_error < 1e-6);
}

TEST_CASE("config and checkpoint validation") {
  RarnConfig bad = toy();
  bad.taps = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  RarnConfig cfg = toy();
  ParamSet p = init_rarn(cfg, 1);
  RarnConfig other = cfg;
  other.taps = 3;
  CHECK_THROWS_AS(check_rarn_params(other, p), ModelError);
  CHECK_THROWS_AS(infer_rarn_config(ParamSet{}), ModelError);
  ParamSet q = parse_checkpoint(serialize_checkpoint(p));
  CHECK(q.bitwise_equal(p));
  CHECK(infer_rarn_config(q).taps == 2);
}
