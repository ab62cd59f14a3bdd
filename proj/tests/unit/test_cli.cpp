#include <doctest.h>

#include <filesystem>
#include <json.hpp>
#include <sstream>
#include <unistd.h>

#include "cli.hpp"
#include "precodec/imageio.hpp"
#include "precodec/metrics.hpp"
#include "precodec/synth.hpp"

using namespace precodec;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "precodec");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = precodec::cli::run(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("precodec_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Small model and proxy keep the commands quick.
std::string toy_config(const std::string& extra = "") {
  const fs::path p = scratch() / ("cfg" + std::to_string(std::hash<std::string>{}(extra)) + ".json");
  write_file(p, R"({"seed": 3, "output_dir": ")" + (scratch() / "out").string() + R"(",
    "rarn": {"feature_channels": 8, "num_resblocks": 1, "taps": 2, "rate_latent_channels": 4, "window": 4, "heads": 1,
             "mlp_hidden": 16, "mlp_layers": 2},
    "tvc": {"window": 4, "latent_channels": 8, "num_coupling_blocks": 2, "num_pre_attention_blocks": 1, "pool": 2,
            "heads": 1, "init": "identity"},
    "train": {"steps": 3, "batch": 2, "crop_size": 16},
    "synthetic": {"count": 2, "size": 32})" + extra + "}");
  return p.string();
}

std::string video(int w, int h, int frames, std::uint64_t seed = 1) {
  const fs::path p = scratch() / ("v" + std::to_string(w) + "x" + std::to_string(h) + "_" + std::to_string(frames) + ".y4m");
  if (!fs::exists(p)) write_y4m(synthetic_video(seed, w, h, frames), p);
  return p.string();
}

std::string model() {
  const fs::path p = scratch() / "init.ckpt";
  if (!fs::exists(p)) REQUIRE(run_cli({"init-model", "--config", toy_config(), p.string()}).code == 0);
  return p.string();
}

std::vector<std::string> data_lines(const std::string& csv) {
  std::vector<std::string> rows;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') rows.push_back(line);
  return rows;
}

std::string column(const std::string& csv, std::size_t col) {
  std::string s;
  for (const auto& row : data_lines(csv)) {
    std::stringstream ss(row);
    std::string f;
    for (std::size_t i = 0; i <= col; ++i) std::getline(ss, f, ',');
    s += f + "\n";
  }
  return s;
}

}  // namespace

TEST_CASE("precode at scale 1 with a fresh model is near identity") {
  const std::string in = video(32, 24, 2);
  const std::string out = (scratch() / "p1.y4m").string();
  Run r = run_cli({"precode", "--config", toy_config(), "--model", model(), "--scale", "1", in, out});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("frames/s") != std::string::npos);
  CHECK(r.out.find("R_f") != std::string::npos);
  const VideoSeq a = read_y4m(in), b = read_y4m(out);
  REQUIRE(b.frames.size() == a.frames.size());
  int worst = 0;
  for (std::size_t f = 0; f < a.frames.size(); ++f)
    for (std::size_t i = 0; i < a.frames[f].y.size(); ++i) worst = std::max(worst, std::abs(int(a.frames[f].y[i]) - int(b.frames[f].y[i])));
  CHECK(worst <= 1);
  auto side = nlohmann::json::parse(read_file(out + ".json"));
  CHECK(side["config_hash"].get<std::string>().size() == 16);
  CHECK(side["seed"] == 3);
}

TEST_CASE("precode to an explicit size") {
  const std::string out = (scratch() / "hd_half.y4m").string();
  Run r = run_cli({"precode", "--config", toy_config(), "--model", model(), "--lightweight", "--size", "960x540", video(1920, 1080, 1), out});
  REQUIRE(r.code == 0);
  CHECK(read_file(out).rfind("YUV4MPEG2 W960 H540 ", 0) == 0);
}

TEST_CASE("precode failure paths") {
  const std::string in = video(32, 24, 2);
  Run r = run_cli({"precode", "--config", toy_config(), "--model", "/no/such/model.ckpt", "--scale", "2", in, (scratch() / "x.y4m").string()});
  CHECK(r.code == cli::kModelError);
  CHECK(r.err.find("/no/such/model.ckpt") != std::string::npos);
  CHECK(run_cli({"precode", "--config", toy_config(), "--model", model(), "--scale", "2", "/no/input.y4m", "o.y4m"}).code == cli::kIoError);
  CHECK(run_cli({"precode", "--model", model(), "in.y4m"}).code == cli::kConfigError);
  CHECK(run_cli({"precode", "--config", "/no/config.json", "--model", model(), "--scale", "2", in, "o.y4m"}).code == cli::kIoError);
  const std::string junk = (scratch() / "junk.ckpt").string();
  write_file(junk, "not a checkpoint");
  CHECK(run_cli({"precode", "--config", toy_config(), "--model", junk, "--scale", "2", in, "o.y4m"}).code == cli::kModelError);
}

TEST_CASE("encode-eval writes one reproducible curve per method") {
  const fs::path dir = scratch() / "ee";
  const std::string in = video(32, 32, 2);
  Run r = run_cli({"encode-eval", "--config", toy_config(), "--scale", "2", "--methods", "bicubic,lanczos", "--out", dir.string(), in});
  REQUIRE(r.code == 0);
  const std::string bic = read_file(dir / "bicubic.csv"), lan = read_file(dir / "lanczos.csv");
  const RdCurve c = parse_curve_csv(bic);
  REQUIRE(c.points.size() == 4);
  for (std::size_t i = 1; i < 4; ++i) CHECK(c.points[i].rate > c.points[i - 1].rate);
  CHECK(column(bic, 2) == column(lan, 2));
  CHECK(bic.find("# config_hash ") != std::string::npos);
  CHECK(bic.find("# seed 3") != std::string::npos);
  CHECK(fs::exists(dir / "bicubic_ssim.csv"));
  CHECK(fs::exists(dir / "encode_eval.json"));
  REQUIRE(run_cli({"encode-eval", "--config", toy_config(), "--scale", "2", "--methods", "bicubic,lanczos", "--out", dir.string(), in}).code == 0);
  CHECK(read_file(dir / "bicubic.csv") == bic);
  CHECK(read_file(dir / "lanczos.csv") == lan);
}

TEST_CASE("encode-eval with the learned precoder") {
  const fs::path dir = scratch() / "ee_rarn";
  Run r = run_cli({"encode-eval", "--config", toy_config(), "--model", model(), "--scale", "2", "--out", dir.string(), video(32, 32, 2)});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "rarn.csv"));
  CHECK(run_cli({"encode-eval", "--config", toy_config(), "--methods", "rarn", "--scale", "2", "--out", dir.string(), video(32, 32, 2)}).code ==
        cli::kConfigError);
}

TEST_CASE("single-point ladder: curve written, BD refuses") {
  const fs::path dir = scratch() / "one";
  const std::string cfg = toy_config(R"(, "codec": {"ladder": [32]})");
  REQUIRE(run_cli({"encode-eval", "--config", cfg, "--scale", "2", "--methods", "bicubic,lanczos", "--out", dir.string(), video(32, 32, 1)}).code == 0);
  CHECK(data_lines(read_file(dir / "bicubic.csv")).size() == 2);
  Run r = run_cli({"bdrate", (dir / "bicubic.csv").string(), (dir / "lanczos.csv").string()});
  CHECK(r.code == cli::kEvalError);
}

TEST_CASE("bdrate reports") {
  const fs::path a = scratch() / "anchor.csv", b = scratch() / "double.csv";
  write_file(a, "# seed 1\nrate_kbps,quality\n100,30\n200,33\n400,36\n800,38.5\n");
  write_file(b, "rate_kbps,quality\n200,30\n400,33\n800,36\n1600,38.5\n");
  Run same = run_cli({"bdrate", a.string(), a.string()});
  REQUIRE(same.code == 0);
  auto j = nlohmann::json::parse(same.out);
  CHECK(j["bd_rate_percent"].get<double>() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(j["bd_quality"].get<double>() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(j["anchor"]["provenance"][0] == "seed 1");
  const fs::path report = scratch() / "bd.json";
  REQUIRE(run_cli({"bdrate", a.string(), b.string(), "-o", report.string()}).code == 0);
  CHECK(std::abs(nlohmann::json::parse(read_file(report))["bd_rate_percent"].get<double>() - 100.0) < 1e-6);

  const fs::path bad = scratch() / "bad.csv";
  write_file(bad, "kbps,quality\n1,2\n");
  Run r = run_cli({"bdrate", bad.string(), a.string()});
  CHECK(r.code == cli::kConfigError);
  CHECK(r.err.find("'kbps'") != std::string::npos);
  CHECK(run_cli({"bdrate", "/no/a.csv", a.string()}).code == cli::kIoError);
}

TEST_CASE("train-toy with zero steps") {
  const fs::path dir = scratch() / "t0";
  Run r = run_cli({"train-toy", "--config", toy_config(R"(, "train": {"steps": 0, "batch": 2, "crop_size": 16})"), "--out", dir.string()});
  REQUIRE(r.code == 0);
  const std::string csv = read_file(dir / "report.csv");
  CHECK(data_lines(csv) == std::vector<std::string>{"step,L,D,R,L_tvc"});
  CHECK(csv.find("# config_hash ") != std::string::npos);
  for (const char* f : {"rarn_init.ckpt", "tvc_init.ckpt", "rarn_final.ckpt", "manifest.json"}) CHECK(fs::exists(dir / "checkpoints" / f));
  auto j = nlohmann::json::parse(read_file(dir / "report.json"));
  CHECK(j["steps"] == 0);
  CHECK(j["seed"] == 3);
}

TEST_CASE("train-toy is reproducible") {
  const fs::path a = scratch() / "ta", b = scratch() / "tb";
  REQUIRE(run_cli({"train-toy", "--config", toy_config(), "--out", a.string()}).code == 0);
  REQUIRE(run_cli({"train-toy", "--config", toy_config(), "--out", b.string()}).code == 0);
  CHECK(data_lines(read_file(a / "report.csv")).size() == 4);
  CHECK(read_file(a / "report.csv") != std::string());
  CHECK(read_file(a / "checkpoints" / "rarn_final.ckpt") == read_file(b / "checkpoints" / "rarn_final.ckpt"));
  CHECK(run_cli({"train-toy", "--config", toy_config(), "--seed", "4", "--out", b.string()}).code == 0);
  CHECK(read_file(a / "checkpoints" / "rarn_final.ckpt") != read_file(b / "checkpoints" / "rarn_final.ckpt"));
}

TEST_CASE("grad-check lists every op and passes") {
  Run r = run_cli({"grad-check"});
  CHECK(r.code == 0);
  for (const char* op : {"conv2d", "windowed_attention", "grid_sample_bicubic", "deformable_compensated_sample", "coupling block",
                         "warp_bilinear", "logistic_bits", "rd_loss"})
    CHECK(r.out.find(op) != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(run_cli({"grad-check", "--suite", "nope"}).code == cli::kConfigError);
}

TEST_CASE("bench reports two throughputs") {
  Run r = run_cli({"bench", "--size", "64x64", "--frames", "2"});
  REQUIRE(r.code == 0);
  double full = 0, light = 0;
  std::istringstream in(r.out);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("full", 0) == 0) full = std::stod(line.substr(4));
    if (line.rfind("lightweight", 0) == 0) light = std::stod(line.substr(11));
  }
  CHECK(full > 0);
  CHECK(light >= full);
}

TEST_CASE("usage errors") {
  CHECK(run_cli({}).code == cli::kConfigError);
  CHECK(run_cli({"frobnicate"}).code == cli::kConfigError);
  CHECK(run_cli({"precode", "--scale", "2", "--size", "4x4", "a", "b"}).code == cli::kConfigError);
  CHECK(run_cli({"train-toy", "--config", toy_config(R"(, "bogus": 1)")}).code == cli::kConfigError);
  CHECK(run_cli({"--help"}).code == 0);
}
