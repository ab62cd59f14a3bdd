#include <doctest.h>

#include "precodec/config.hpp"

using namespace precodec;

TEST_CASE("defaults parse and finalize") {
  RunConfig c = parse_run_config("{}");
  CHECK(c.seed == 1);
  CHECK(c.train.seed == 1);
  CHECK(c.train.checkpoint_dir == std::filesystem::path("out") / "checkpoints");
  CHECK(c.codec.ladder == std::vector<double>{37, 32, 27, 22});
  CHECK_FALSE(c.scale.has_value());
}

TEST_CASE("sections are read") {
  RunConfig c = parse_run_config(R"({
    "seed": 9, "inputs": ["a.y4m", "b.y4m"], "scale": 2.5, "methods": ["bicubic", "rarn"], "upsample": "lanczos",
    "rarn": {"feature_channels": 12, "lightweight": true},
    "tvc": {"init": "identity", "window": 4},
    "train": {"lambda": 0.5, "rarn_adam": {"lr": 0.01}, "scales": {"discrete": [2.0], "p_continuous": 0}},
    "codec": {"ladder": [42, 37, 32, 27], "max_processes": 2}
  })");
  CHECK(c.seed == 9);
  CHECK(c.train.seed == 9);
  CHECK(c.inputs.size() == 2);
  CHECK(*c.scale == 2.5);
  CHECK(c.upsample == Filter::kLanczos);
  CHECK(c.rarn.feature_channels == 12);
  CHECK(c.rarn.lightweight);
  CHECK(c.tvc.init == TvcConfig::Init::kIdentity);
  CHECK(c.train.lambda == 0.5);
  CHECK(c.train.rarn_adam.lr == 0.01);
  CHECK(c.train.scales.discrete == std::vector<double>{2.0});
  CHECK(c.train.codec.ladder == c.codec.ladder);
  CHECK(c.codec.max_processes == 2);
  const ScalePlan p = c.plan_for(100, 50);
  CHECK(p.out_w == 40);
  CHECK(p.out_h == 20);
}

TEST_CASE("unknown keys are rejected at every level") {
  for (const char* text : {R"({"sed": 1})", R"({"rarn": {"tap": 2}})", R"({"train": {"scales": {"lo": 1}}})",
                           R"({"train": {"rarn_adam": {"learning_rate": 1}}})", R"({"codec": {"qp": 3}})"}) {
    CAPTURE(text);
    try {
      parse_run_config(text);
      FAIL("accepted");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("unknown key") != std::string::npos);
    }
  }
}

TEST_CASE("types and owning-module validation") {
  CHECK_THROWS_AS(parse_run_config(R"({"seed": "one"})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"seed": -1})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"rarn": {"taps": 1.5}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"rarn": {"taps": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"tvc": {"init": "zeros"}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"batch": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"codec": {"ladder": [37, 37]}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"scale": 2, "size": "10x10"})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"methods": ["nearest"]})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{not json"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[]"), ConfigError);
}

TEST_CASE("size strings") {
  CHECK(parse_size("960x540") == std::pair<int, int>{960, 540});
  CHECK(parse_run_config(R"({"size": [16, 8]})").size == std::pair<int, int>{16, 8});
  for (const char* bad : {"960", "960x", "x540", "0x5", "960x540x2", "960*540"}) CHECK_THROWS_AS(parse_size(bad), ConfigError);
}

TEST_CASE("config hash is stable and sensitive") {
  const RunConfig a = parse_run_config(R"({"seed": 4})");
  const RunConfig b = parse_run_config(R"({"seed": 4, "codec": {"ladder": [37, 32, 27, 22]}})");
  const RunConfig c = parse_run_config(R"({"seed": 5})");
  CHECK(config_hash(a).size() == 16);
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a) != config_hash(c));
  // canonical form parses back to the same config
  CHECK(config_hash(parse_run_config(canonical_json(c))) == config_hash(c));
}
