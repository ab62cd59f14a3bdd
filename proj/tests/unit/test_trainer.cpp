#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "precodec/gradcheck.hpp"
#include "precodec/ops.hpp"
#include "precodec/synth.hpp"
#include "precodec/trainer.hpp"
#include "unit/test_util.hpp"

using namespace precodec;
using testutil::random_tensor;

namespace {

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

TvcConfig toy_tvc(TvcConfig::Init init = TvcConfig::Init::kIdentity) {
  TvcConfig c;
  c.window = 4;
  c.latent_channels = 8;
  c.num_coupling_blocks = 2;
  c.num_pre_attention_blocks = 1;
  c.pool = 2;
  c.heads = 1;
  c.init = init;
  return c;
}

TrainConfig toy_train() {
  TrainConfig t;
  t.steps = 4;
  t.batch = 2;
  t.crop_size = 16;
  t.lambda = 0.005;
  t.rarn_adam.lr = 1e-3;
  t.tvc_adam.lr = 1e-3;
  return t;
}

std::vector<std::vector<Tensor>> toy_data(int n, int size) {
  std::vector<std::vector<Tensor>> d;
  for (int i = 0; i < n; ++i) d.push_back({synthetic_image(50 + std::uint64_t(i), size, size)});
  return d;
}

Tensor mid(const Tensor& t) { return add_scalar(mul_scalar(t, 0.5), 0.25); }

}  // namespace

TEST_CASE("rd_loss vanishes on a constant image") {
  TrainConfig cfg = toy_train();
  const Tensor x = Tensor::full({1, 3, 12, 12}, 0.4);
  const ScalePlan plan = plan_for_scale(12, 12, 2.0);
  const Tensor y = bicubic_resize(x, plan);
  RdTerms t = rd_loss(x, y, y, Tensor::scalar(100.0), Tensor::scalar(10.0), cfg);
  CHECK(std::abs(t.D.item()) < 1e-24);
  CHECK(t.R.item() == doctest::Approx((100.0 + 0.1 * 10.0) / 144.0));
  CHECK(t.L.item() == doctest::Approx(t.D.item() + 0.005 * t.R.item()));
}

TEST_CASE("rd_loss with zero lambda is D exactly") {
  TrainConfig cfg = toy_train();
  cfg.lambda = 0;
  const Tensor x = synthetic_image(3, 16, 16);
  const Tensor y = bicubic_resize(x, plan_for_scale(16, 16, 2.0));
  RdTerms t = rd_loss(x, y, add_scalar(y, 0.01), Tensor::scalar(50.0), Tensor::scalar(5.0), cfg);
  CHECK(t.L.item() == t.D.item());
  CHECK(t.D.item() > 0);
  CHECK_THROWS_AS(rd_loss(x, y, x, Tensor::scalar(1.0), Tensor::scalar(1.0), cfg), InvalidShape);
}

TEST_CASE("rd_loss gradient through the frozen proxy matches finite differences") {
  const RarnConfig rc = toy_rarn();
  const TvcConfig tc = toy_tvc();
  ParamSet rp = init_rarn(rc, 3);
  Rng r(4);
  // small output head so y stays inside the straight-through clamp
  for (const char* n : {"mlp.offset.weight", "mlp.weight.weight"}) rp.set(n, random_tensor(r, rp.at(n).shape(), -0.3, 0.3));
  rp.set("out.weight", random_tensor(r, rp.at("out.weight").shape(), -0.05, 0.05));
  ParamSet tp = init_tvc(tc, 5);
  for (const char* n : {"inn0.s.weight", "inn1.t.weight"}) tp.set(n, random_tensor(r, tp.at(n).shape(), -0.05, 0.05));
  const ParamSet frozen = tp.frozen();
  TrainConfig cfg = toy_train();
  cfg.lambda = 0.05;
  const Tensor x = mid(synthetic_image(9, 8, 8));
  const ScalePlan plan = make_plan(8, 8, 5, 5);
  const std::vector<std::string> names{"mlp.offset.weight", "head.weight", "rate.enc1.weight"};
  auto f = [&](const std::vector<Tensor>& in) {
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
  const auto res = check_gradients("rd_loss", f, in, {.probes_per_input = 3});
  CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("tvc_fit_step converges on a lossless target") {
  const TvcConfig tc = toy_tvc(TvcConfig::Init::kRandom);
  ParamSet p = init_tvc(tc, 2);
  p.set("quant.log_step", Tensor::scalar(std::log(1e-3)));
  std::vector<Tensor> ys;
  for (int i = 0; i < 2; ++i) ys.push_back(synthetic_image(70 + std::uint64_t(i), 12, 12));
  AdamConfig ac;
  ac.lr = 1e-2;
  Adam opt(ac);
  Rng rng(1);
  double first = 0, last = 0;
  for (int s = 0; s < 200; ++s) {
    const auto st = tvc_fit_step(ys, ys, 0.0, p, tc, opt, rng, 0.01);
    if (s == 0) first = st.loss;
    last = st.loss;
  }
  INFO("first " << first << " last " << last);
  CHECK(last < 0.1 * first);
}

TEST_CASE("tvc_fit_step with zero learning rate changes nothing") {
  const TvcConfig tc = toy_tvc();
  ParamSet p = init_tvc(tc, 2);
  const ParamSet before = p;
  std::vector<Tensor> ys{synthetic_image(71, 12, 12)};
  std::vector<Tensor> ts{add_scalar(mul_scalar(ys[0], 0.9), 0.05)};
  AdamConfig ac;
  ac.lr = 0;
  Adam opt(ac);
  Rng rng(1);
  const double a = tvc_fit_step(ys, ts, 500.0, p, tc, opt, rng, 0.01).loss;
  Rng rng2(1);
  const double b = tvc_fit_step(ys, ts, 500.0, p, tc, opt, rng2, 0.01).loss;
  CHECK(a == b);
  CHECK(p.bitwise_equal(before));
  CHECK_THROWS_AS(tvc_fit_step(ys, {}, 1.0, p, tc, opt, rng, 0.01), InvalidArgument);
}

TEST_CASE("rate calibration pulls the proxy rate to the measured bits") {
  const TvcConfig tc = toy_tvc();
  ParamSet p = init_tvc(tc, 2);
  std::vector<Tensor> ys{synthetic_image(72, 16, 16), synthetic_image(73, 16, 16)};
  CodecConfig codec;
  double measured = 0;
  std::vector<Tensor> ts;
  for (const Tensor& y : ys) {
    CodecPass cp = codec_pass(y, codec, 37);
    ts.push_back(cp.decoded);
    measured += double(cp.bits);
  }
  AdamConfig ac;
  ac.lr = 1e-3;
  Adam opt(ac);
  Rng rng(2);
  TvcFitStats st;
  st = tvc_fit_step(ys, ts, measured, p, tc, opt, rng, 0.01);
  const double initial = std::abs(st.rate_ratio - 1.0);
  for (int s = 0; s < 60; ++s) st = tvc_fit_step(ys, ts, measured, p, tc, opt, rng, 0.01);
  INFO("initial ratio error " << initial << ", final ratio " << st.rate_ratio);
  CHECK(std::abs(st.rate_ratio - 1.0) < 0.05);
  CHECK(std::abs(st.rate_ratio - 1.0) < initial);
}

TEST_CASE("alternate_train bookkeeping, determinism and isolation") {
  const auto data = toy_data(3, 24);
  TrainConfig cfg = toy_train();

  SUBCASE("zero steps still writes initial checkpoints") {
    const auto dir = std::filesystem::temp_directory_path() / "precodec_train_zero";
    std::filesystem::remove_all(dir);
    cfg.steps = 0;
    cfg.checkpoint_dir = dir;
    TrainResult r = alternate_train(data, toy_rarn(), toy_tvc(), cfg);
    CHECK(r.report.records.empty());
    CHECK(r.report.csv() == "step,L,D,R,L_tvc\n");
    REQUIRE(r.report.checkpoints.size() == 2);
    CHECK(load_checkpoint(dir / "rarn_init.ckpt").bitwise_equal(init_rarn(toy_rarn(), cfg.seed)));
    std::filesystem::remove_all(dir);
  }
  SUBCASE("records per step and identical reruns") {
    TrainResult a = alternate_train(data, toy_rarn(), toy_tvc(), cfg);
    TrainResult b = alternate_train(data, toy_rarn(), toy_tvc(), cfg);
    REQUIRE(a.report.records.size() == 4);
    CHECK(a.report.csv() == b.report.csv());
    CHECK(a.rarn.bitwise_equal(b.rarn));
    CHECK(a.tvc.bitwise_equal(b.tvc));
    for (const auto& rec : a.report.records) {
      CHECK(std::isfinite(rec.L));
      CHECK(rec.D >= 0);
      CHECK(rec.R >= 0);
      CHECK(rec.L_tvc >= 0);
    }
    CHECK_FALSE(a.rarn.bitwise_equal(init_rarn(toy_rarn(), cfg.seed)));
  }
  SUBCASE("rarn steps never touch the proxy") {
    cfg.tvc_steps_per_rarn_step = 0;
    TrainResult r = alternate_train(data, toy_rarn(), toy_tvc(), cfg);
    CHECK(r.tvc.bitwise_equal(init_tvc(toy_tvc(), cfg.seed + 1)));
    CHECK_FALSE(r.rarn.bitwise_equal(init_rarn(toy_rarn(), cfg.seed)));
  }
  SUBCASE("proxy steps never touch the precoder") {
    cfg.rarn_adam.lr = 0;
    TrainResult r = alternate_train(data, toy_rarn(), toy_tvc(), cfg);
    CHECK(r.rarn.bitwise_equal(init_rarn(toy_rarn(), cfg.seed)));
    CHECK_FALSE(r.tvc.bitwise_equal(init_tvc(toy_tvc(), cfg.seed + 1)));
  }
  SUBCASE("gop mode runs on clips") {
    std::vector<std::vector<Tensor>> clips;
    VideoSeq v = synthetic_video(3, 24, 24, 4);
    std::vector<Tensor> frames;
    for (const Frame& f : v.frames) frames.push_back(frame_to_tensor(f));
    clips.push_back(frames);
    cfg.gop_mode = true;
    cfg.steps = 2;
    cfg.batch = 1;
    TrainResult r = alternate_train(clips, toy_rarn(), toy_tvc(), cfg);
    CHECK(r.report.records.size() == 2);
    CHECK_THROWS_AS(alternate_train(data, toy_rarn(), toy_tvc(), cfg), InvalidArgument);
  }
}

TEST_CASE("overflowing input aborts with the step") {
  auto data = toy_data(1, 16);
  std::vector<double> v = data[0][0].to_vector();
  for (double& e : v) e = 1e300;
  data[0][0] = Tensor::from(data[0][0].shape(), v);
  TrainConfig cfg = toy_train();
  try {
    alternate_train(data, toy_rarn(), toy_tvc(), cfg);
    FAIL("expected abort");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("smoothed training loss decreases") {
  // one image, crop == image: a fixed batch, so the windows compare like with like
  const auto data = toy_data(1, 32);
  TrainConfig cfg = toy_train();
  cfg.steps = 300;
  cfg.crop_size = 32;
  cfg.batch = 1;
  cfg.lambda = 0.001;
  cfg.rarn_adam.lr = 3e-3;
  cfg.tvc_adam.lr = 3e-3;
  cfg.tvc_warmup_steps = 100;
  cfg.scales.discrete = {2.0};
  cfg.scales.p_continuous = 0;
  TrainResult r = alternate_train(data, toy_rarn(), toy_tvc(), cfg);
  double first = 0, last = 0;
  for (int i = 0; i < 50; ++i) {
    first += r.report.records[std::size_t(i)].L;
    last += r.report.records[std::size_t(250 + i)].L;
  }
  INFO("first window " << first / 50 << " last window " << last / 50);
  CHECK(last < first);
}

TEST_CASE("config validation") {
  TrainConfig cfg = toy_train();
  CHECK_NOTHROW(cfg.validate());
  cfg.lambda_d = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_train();
  cfg.scales.discrete = {0.5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_train();
  cfg.codec_point = 60;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(alternate_train({}, toy_rarn(), toy_tvc(), toy_train()), InvalidArgument);
  CHECK_THROWS_AS(alternate_train(toy_data(1, 8), toy_rarn(), toy_tvc(), toy_train()), InvalidShape);
}
