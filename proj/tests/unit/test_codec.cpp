#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "precodec/codec.hpp"
#include "precodec/synth.hpp"

using namespace precodec;

namespace {

double luma_mse(const Frame& a, const Frame& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.y.size(); ++i) {
    const double d = double(a.y[i]) - double(b.y[i]);
    s += d * d;
  }
  return s / double(a.y.size());
}

VideoSeq single(const Frame& f) {
  VideoSeq s;
  s.frames.push_back(f);
  return s;
}

}  // namespace

TEST_CASE("integer transform pair at qp 0 is near lossless on random content") {
  const Frame f = synthetic_frame(3, 40, 24);
  const Frame d = mock_code_frame(f, 0).decoded;
  int worst = 0;
  for (std::size_t i = 0; i < f.y.size(); ++i) worst = std::max(worst, std::abs(int(f.y[i]) - int(d.y[i])));
  CHECK(worst <= 1);
}

TEST_CASE("constant frames round-trip losslessly at a tiny step") {
  for (int v : {0, 17, 128, 200, 255}) {
    Frame f(24, 16, static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(255 - v));
    const auto r = mock_code_frame(f, 0);
    CHECK(r.decoded == f);
  }
}

TEST_CASE("mock ladder coarse to fine is monotone on five images") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Frame f = synthetic_frame(seed, 64, 48);
    double prev_mse = 1e300;
    std::int64_t prev_bits = 0;
    for (int qp : {42, 37, 32, 27, 22}) {
      const auto r = mock_code_frame(f, qp);
      const double m = luma_mse(f, r.decoded);
      CHECK(m < prev_mse);
      CHECK(r.bits > prev_bits);
      prev_mse = m;
      prev_bits = r.bits;
    }
  }
}

TEST_CASE("mock codec is deterministic with a pinned bit count") {
  const Frame f = synthetic_frame(11, 32, 32);
  const auto a = mock_code_frame(f, 30), b = mock_code_frame(f, 30);
  CHECK(a.bits == b.bits);
  CHECK(a.decoded == b.decoded);
  // all-zero coefficients cost exactly one bit each
  Frame flat(16, 16, 128, 128);
  CHECK(mock_code_frame(flat, 40).bits == 16 * 16 + 2 * 8 * 8);
}

TEST_CASE("qp step doubles every six") {
  CHECK(qp_step(4) == doctest::Approx(1.0));
  CHECK(qp_step(10) == doctest::Approx(2.0));
  CHECK(qp_step(22) / qp_step(16) == doctest::Approx(2.0));
}

TEST_CASE("run_ladder returns ordered results with monotone kbps") {
  const VideoSeq seq = synthetic_video(4, 48, 32, 3);
  CodecConfig cfg;
  cfg.ladder = {37, 32, 27, 22};
  const auto res = run_ladder(seq, cfg);
  REQUIRE(res.size() == 4);
  for (std::size_t i = 0; i < res.size(); ++i) {
    CHECK(res[i].ladder_point == cfg.ladder[i]);
    CHECK(res[i].decoded.frames.size() == 3);
    if (i > 0) CHECK(res[i].kbps > res[i - 1].kbps);
  }
  // kbps = bits / seconds / 1000 at 30 fps
  CHECK(res[0].kbps == doctest::Approx(double(res[0].bits_total) / 0.1 / 1000.0));
  cfg.max_processes = 3;
  const auto par = run_ladder(seq, cfg);
  for (std::size_t i = 0; i < res.size(); ++i) CHECK(par[i].bits_total == res[i].bits_total);
}

TEST_CASE("ladder validation") {
  CodecConfig cfg;
  cfg.ladder = {};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.ladder = {32, 32};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.ladder = {22, 32, 27};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.ladder = {22.5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.ladder = {22, 27};
  CHECK_NOTHROW(cfg.validate());
  cfg.rate_mode = CodecConfig::RateMode::kTwoPassBitrate;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("external template validation") {
  CodecConfig cfg = x265_two_pass_config({500, 1000, 2000, 4000});
  CHECK_NOTHROW(cfg.validate());
  cfg.encode_cmd = "enc {in} {out}";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.rate_mode = CodecConfig::RateMode::kCqp;
  cfg.encode_cmd = "enc -q {qp} {in} {out}";
  CHECK_NOTHROW(cfg.validate());
  CHECK_THROWS_AS(expand_template("x {nope}", {{"in", "a"}}), ConfigError);
  CHECK(expand_template("a{in}b{out}", {{"in", "1"}, {"out", "2"}}) == "a1b2");
}

TEST_CASE("false binary raises CodecProcessError naming the command") {
  CodecConfig cfg;
  cfg.kind = CodecConfig::Kind::kExternal;
  cfg.rate_mode = CodecConfig::RateMode::kCqp;
  cfg.encode_cmd = "definitely-not-an-encoder-xyz --qp {qp} {in} {out}";
  cfg.decode_cmd = "cp {in} {out}";
  cfg.ladder = {30};
  cfg.timeout_s = 20;
  const VideoSeq seq = synthetic_video(1, 16, 16, 1);
  bool thrown = false;
  try {
    encode_decode(seq, cfg, 30);
  } catch (const CodecProcessError& e) {
    thrown = true;
    CHECK(std::string(e.what()).find("definitely-not-an-encoder-xyz") != std::string::npos);
  }
  CHECK(thrown);
}

TEST_CASE("external pipeline with shell tools and contract checks") {
  const VideoSeq seq = synthetic_video(2, 16, 16, 2);
  CodecConfig cfg;
  cfg.kind = CodecConfig::Kind::kExternal;
  cfg.rate_mode = CodecConfig::RateMode::kCqp;
  cfg.encode_cmd = "cp {in} {out} # {qp}";
  cfg.decode_cmd = "cp {in} {out}";
  cfg.ladder = {30};
  cfg.timeout_s = 20;
  const auto r = encode_decode(seq, cfg, 30);
  CHECK(r.decoded.frames == seq.frames);
  CHECK(r.bits_total == 8 * std::int64_t(encode_y4m(seq).size()));

  // decoder emits a 1-frame stream for a 2-frame input
  cfg.decode_cmd = "head -c $(( $(head -1 {in} | wc -c) + 6 + 16*16*3/2 )) {in} > {out}";
  CHECK_THROWS_AS(encode_decode(seq, cfg, 30), CodecContractError);

  cfg.decode_cmd = "sleep 5; cp {in} {out}";
  cfg.timeout_s = 0.3;
  CHECK_THROWS_AS(encode_decode(seq, cfg, 30), CodecProcessError);
}

TEST_CASE("process cap honours the environment") {
  CodecConfig cfg;
  setenv("PRECODEC_MAX_ENCODERS", "3", 1);
  CHECK(encoder_process_cap(cfg) == 3);
  unsetenv("PRECODEC_MAX_ENCODERS");
  CHECK(encoder_process_cap(cfg) == 1);
  cfg.max_processes = 2;
  CHECK(encoder_process_cap(cfg) == 2);
}
