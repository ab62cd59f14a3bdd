#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "precodec/config.hpp"
#include "precodec/gradcheck.hpp"
#include "precodec/imageio.hpp"
#include "precodec/metrics.hpp"
#include "precodec/pipeline.hpp"
#include "precodec/synth.hpp"
#include "precodec/trainer.hpp"

namespace precodec::cli {
namespace fs = std::filesystem;
using nlohmann::ordered_json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InvalidArgument*>(&e)) return kConfigError;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const UnsupportedFormat*>(&e) || dynamic_cast<const CorruptStream*>(&e))
    return kIoError;
  if (dynamic_cast<const ModelError*>(&e)) return kModelError;
  if (dynamic_cast<const InsufficientPoints*>(&e) || dynamic_cast<const NoOverlap*>(&e)) return kEvalError;
  if (dynamic_cast<const CodecProcessError*>(&e) || dynamic_cast<const CodecContractError*>(&e)) return kCodecError;
  return kFailure;
}

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  int jobs = 0;
  std::string out_dir;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "RunConfig JSON file");
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--out", c.out_dir, "output directory (overrides output_dir)");
}

struct Target {
  std::optional<double> scale;
  std::string size;
};

void add_target(CLI::App* cmd, Target& t) {
  auto* s = cmd->add_option("--scale", t.scale, "downscale factor S >= 1");
  auto* z = cmd->add_option("--size", t.size, "output size WxH");
  s->excludes(z);
}

RunConfig load(const Common& c, int jobs, const Target* t = nullptr) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out_dir.empty()) cfg.output_dir = c.out_dir;
  if (jobs > 0) cfg.codec.max_processes = jobs;
  if (t && t->scale) {
    cfg.scale = *t->scale;
    cfg.size.reset();
  }
  if (t && !t->size.empty()) {
    cfg.size = parse_size(t->size);
    cfg.scale.reset();
  }
  cfg.finalize();
  return cfg;
}

ParamSet load_model(const fs::path& path) {
  if (path.empty()) throw ConfigError("no model checkpoint given (--model or config 'model')");
  if (!fs::exists(path)) throw ModelError("checkpoint not found: " + path.string());
  try {
    return load_checkpoint(path);
  } catch (const Error& e) {
    throw ModelError("cannot load checkpoint " + path.string() + ": " + e.what());
  }
}

std::vector<std::string> provenance(const RunConfig& cfg) {
  return {"config_hash " + config_hash(cfg), "seed " + std::to_string(cfg.seed)};
}

std::string plan_str(const ScalePlan& p) {
  return std::to_string(p.in_w) + "x" + std::to_string(p.in_h) + " -> " + std::to_string(p.out_w) + "x" + std::to_string(p.out_h);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- precode ------------------------------------------------------------

struct PrecodeArgs {
  Common common;
  Target target;
  std::string model, input, output;
  bool lightweight = false;
};

int cmd_precode(const PrecodeArgs& a, int jobs, std::ostream& out) {
  RunConfig cfg = load(a.common, jobs, &a.target);
  const fs::path model_path = a.model.empty() ? cfg.model : fs::path(a.model);
  const ParamSet params = load_model(model_path);
  RarnConfig rc = infer_rarn_config(params);
  rc.lightweight = a.lightweight || cfg.rarn.lightweight;
  const VideoSeq src = read_y4m(a.input);
  if (src.frames.empty()) throw IoError(a.input + ": no frames");
  const ScalePlan plan = cfg.plan_for(src.width(), src.height());
  out << "precode " << plan_str(plan) << (rc.lightweight ? " (lightweight)" : "") << "\n";
  out << "output " << plan.out_w << "x" << plan.out_h << "\n";

  VideoSeq dst;
  dst.fps_num = src.fps_num;
  dst.fps_den = src.fps_den;
  ordered_json frames = ordered_json::array();
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < src.frames.size(); ++i) {
    RarnOutput o = precode(frame_to_tensor(src.frames[i]), plan, params, rc);
    dst.frames.push_back(tensor_to_frame(o.y));
    const double bits = o.rate_bits.item();
    out << "frame " << i << " R_f " << bits << " bits\n";
    frames.push_back({{"frame", i}, {"rate_bits", bits}});
  }
  const double secs = seconds_since(t0);
  const double fps = double(src.frames.size()) / std::max(secs, 1e-9);
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu frames in %.3f s (%.2f frames/s)\n", src.frames.size(), secs, fps);
  out << buf;
  write_y4m(dst, a.output);

  ordered_json side;
  side["config_hash"] = config_hash(cfg);
  side["seed"] = cfg.seed;
  side["model"] = model_path.string();
  side["lightweight"] = rc.lightweight;
  side["input"] = a.input;
  side["input_size"] = {plan.in_w, plan.in_h};
  side["output_size"] = {plan.out_w, plan.out_h};
  side["frames"] = frames;
  side["frames_per_second"] = fps;
  write_file(a.output + ".json", side.dump(2) + "\n");
  return kOk;
}

// ---- encode-eval --------------------------------------------------------

struct EncodeEvalArgs {
  Common common;
  Target target;
  std::string model, input, methods, upsample;
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) v.push_back(item);
  return v;
}

int cmd_encode_eval(const EncodeEvalArgs& a, int jobs, std::ostream& out) {
  RunConfig cfg = load(a.common, jobs, &a.target);
  if (!a.model.empty()) cfg.model = a.model;
  if (!a.methods.empty()) {
    cfg.methods = split_csv(a.methods);
  } else if (!cfg.model.empty() && std::find(cfg.methods.begin(), cfg.methods.end(), "rarn") == cfg.methods.end()) {
    cfg.methods.push_back("rarn");
  }
  if (a.upsample == "lanczos") cfg.upsample = Filter::kLanczos;
  else if (a.upsample == "bicubic") cfg.upsample = Filter::kBicubic;
  else if (!a.upsample.empty()) throw ConfigError("--upsample must be bicubic or lanczos");
  cfg.finalize();

  const VideoSeq src = read_y4m(a.input);
  if (src.frames.empty()) throw IoError(a.input + ": no frames");
  const ScalePlan plan = cfg.plan_for(src.width(), src.height());
  std::optional<ParamSet> params;
  fs::create_directories(cfg.output_dir);

  ordered_json summary;
  summary["config_hash"] = config_hash(cfg);
  summary["seed"] = cfg.seed;
  summary["source"] = a.input;
  summary["plan"] = plan_str(plan);
  summary["upsample"] = cfg.upsample == Filter::kBicubic ? "bicubic" : "lanczos";
  summary["methods"] = ordered_json::object();
  out << "encode-eval " << plan_str(plan) << ", " << cfg.codec.ladder.size() << "-point ladder\n";
  for (const std::string& m : cfg.methods) {
    Precoder pre;
    if (m == "bicubic") {
      pre = filter_precoder(Filter::kBicubic);
    } else if (m == "lanczos") {
      pre = filter_precoder(Filter::kLanczos);
    } else {
      if (!params) params = load_model(cfg.model);
      RarnConfig rc = infer_rarn_config(*params);
      rc.lightweight = m == "rarn-lightweight";
      pre = rarn_precoder(*params, rc);
    }
    const MethodCurve mc = evaluate_method(m, src, pre, plan, cfg.codec, cfg.upsample);
    for (bool ssim : {false, true}) {
      RdCurve c = ssim ? mc.ssim_curve() : mc.psnr_curve();
      c.provenance = provenance(cfg);
      c.provenance.push_back("method " + m);
      c.provenance.push_back(std::string("metric ") + (ssim ? "ssim_y" : "psnr_y"));
      c.provenance.push_back("source " + a.input);
      c.provenance.push_back("plan " + plan_str(plan));
      write_curve_csv(c, cfg.output_dir / (m + (ssim ? "_ssim.csv" : ".csv")));
    }
    ordered_json pts = ordered_json::array();
    for (const auto& p : mc.points) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "  %-16s point %6g  %10.3f kbps  %7.3f dB  ssim %.5f\n", m.c_str(), p.ladder_point, p.kbps, p.psnr_y,
                    p.ssim_y);
      out << buf;
      pts.push_back({{"ladder_point", p.ladder_point}, {"bits", p.bits}, {"kbps", p.kbps}, {"psnr_y", p.psnr_y}, {"ssim_y", p.ssim_y}});
    }
    summary["methods"][m] = {{"side_bits", mc.side_bits}, {"points", pts}};
  }
  write_file(cfg.output_dir / "encode_eval.json", summary.dump(2) + "\n");
  if (cfg.codec.ladder.size() < 4) out << "note: BD metrics need at least 4 ladder points\n";
  out << "wrote " << cfg.methods.size() << " curves to " << cfg.output_dir.string() << "\n";
  return kOk;
}

// ---- bdrate -------------------------------------------------------------

struct BdArgs {
  std::string anchor, test, output;
};

int cmd_bdrate(const BdArgs& a, std::ostream& out) {
  const RdCurve anchor = read_curve_csv(a.anchor);
  const RdCurve test = read_curve_csv(a.test);
  anchor.warn_inversions("anchor");
  test.warn_inversions("test");
  const BdReport r = bd_report(anchor, test);
  ordered_json j = ordered_json::parse(r.to_json());
  j["anchor"] = {{"path", a.anchor}, {"provenance", anchor.provenance}};
  j["test"] = {{"path", a.test}, {"provenance", test.provenance}};
  const std::string text = j.dump(2) + "\n";
  if (a.output.empty()) {
    out << text;
  } else {
    write_file(a.output, text);
    char buf[128];
    std::snprintf(buf, sizeof buf, "BD-rate %.4f %%  BD-quality %.4f\n", r.bd_rate, r.bd_quality);
    out << buf;
  }
  return kOk;
}

// ---- train-toy ----------------------------------------------------------

std::vector<std::vector<Tensor>> training_data(const RunConfig& cfg) {
  std::vector<std::vector<Tensor>> data;
  if (cfg.inputs.empty()) {
    for (int i = 0; i < cfg.synthetic.count; ++i)
      data.push_back({synthetic_image(cfg.synthetic.seed + std::uint64_t(i), cfg.synthetic.size, cfg.synthetic.size)});
    return data;
  }
  for (const auto& path : cfg.inputs) {
    const VideoSeq seq = read_y4m(path);
    if (cfg.train.gop_mode) {
      for (std::size_t f = 0; f + 3 <= seq.frames.size(); f += 3)
        data.push_back({frame_to_tensor(seq.frames[f]), frame_to_tensor(seq.frames[f + 1]), frame_to_tensor(seq.frames[f + 2])});
    } else {
      for (const Frame& fr : seq.frames) data.push_back({frame_to_tensor(fr)});
    }
  }
  if (data.empty()) throw ConfigError("training inputs hold no usable frames");
  return data;
}

int cmd_train_toy(const Common& c, int jobs, std::ostream& out) {
  RunConfig cfg = load(c, jobs);
  const auto data = training_data(cfg);
  for (const auto& item : data)
    if (item[0].dim(2) < cfg.train.crop_size || item[0].dim(3) < cfg.train.crop_size)
      throw ConfigError("training images are smaller than crop_size " + std::to_string(cfg.train.crop_size));
  fs::create_directories(cfg.output_dir);
  out << "train-toy: " << data.size() << " items, " << cfg.train.steps << " steps, lambda " << cfg.train.lambda << "\n";
  TrainResult r = alternate_train(data, cfg.rarn, cfg.tvc, cfg.train);
  save_checkpoint(r.rarn, cfg.train.checkpoint_dir / "rarn_final.ckpt");
  save_checkpoint(r.tvc, cfg.train.checkpoint_dir / "tvc_final.ckpt");
  r.report.checkpoints.push_back((cfg.train.checkpoint_dir / "rarn_final.ckpt").string());
  r.report.checkpoints.push_back((cfg.train.checkpoint_dir / "tvc_final.ckpt").string());

  std::string csv;
  for (const auto& line : provenance(cfg)) csv += "# " + line + "\n";
  csv += r.report.csv();
  write_file(cfg.output_dir / "report.csv", csv);
  ordered_json j = ordered_json::parse(r.report.json_summary());
  j["config_hash"] = config_hash(cfg);
  j["config"] = nlohmann::json::parse(canonical_json(cfg));
  write_file(cfg.output_dir / "report.json", j.dump(2) + "\n");
  ordered_json manifest{{"config_hash", config_hash(cfg)}, {"seed", cfg.seed}, {"checkpoints", r.report.checkpoints}};
  write_file(cfg.train.checkpoint_dir / "manifest.json", manifest.dump(2) + "\n");
  if (!r.report.records.empty()) {
    const auto& last = r.report.records.back();
    out << "last step L " << last.L << " D " << last.D << " R " << last.R << " L_tvc " << last.L_tvc << "\n";
  }
  out << "wrote " << (cfg.output_dir / "report.csv").string() << " in " << r.report.wall_seconds << " s\n";
  return kOk;
}

// ---- grad-check ---------------------------------------------------------

int cmd_grad_check(const std::vector<std::string>& only, std::ostream& out) {
  int failures = 0, ran = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& suite : gradient_suites()) {
    if (!only.empty() && std::find(only.begin(), only.end(), suite.name) == only.end()) continue;
    for (const auto& r : suite.run()) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%-4s %-18s %-58s max rel err %.3e (%lld probes)\n", r.passed ? "ok" : "FAIL", suite.name.c_str(),
                    r.name.c_str(), r.max_rel_error, static_cast<long long>(r.probes));
      out << buf;
      failures += r.passed ? 0 : 1;
      ++ran;
    }
  }
  if (ran == 0) throw ConfigError("no gradient suite matched");
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d checks, %d failed, %.2f s\n", ran, failures, seconds_since(t0));
  out << buf;
  return failures == 0 ? kOk : kFailure;
}

// ---- bench --------------------------------------------------------------

struct BenchArgs {
  Common common;
  std::string size = "64x64";
  double scale = 2.0;
  int frames = 3;
};

int cmd_bench(const BenchArgs& a, int jobs, std::ostream& out) {
  RunConfig cfg = load(a.common, jobs);
  const auto [w, h] = parse_size(a.size);
  if (a.frames <= 0) throw ConfigError("--frames must be positive");
  const ScalePlan plan = plan_for_scale(h, w, a.scale);
  const Tensor x = synthetic_image(cfg.seed, h, w);
  out << "bench " << plan_str(plan) << ", " << a.frames << " frames\n";
  for (bool light : {false, true}) {
    RarnConfig rc = cfg.rarn;
    rc.lightweight = light;
    const ParamSet p = init_rarn(rc, cfg.seed);
    precode(x, plan, p, rc);  // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < a.frames; ++i) precode(x, plan, p, rc);
    const double fps = a.frames / std::max(seconds_since(t0), 1e-9);
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-12s %10.3f frames/s  (%lld params)\n", light ? "lightweight" : "full", fps,
                  static_cast<long long>(p.count()));
    out << buf;
  }
  return kOk;
}

// ---- init-model ---------------------------------------------------------

int cmd_init_model(const Common& c, bool lightweight, const std::string& path, int jobs, std::ostream& out) {
  RunConfig cfg = load(c, jobs);
  RarnConfig rc = cfg.rarn;
  rc.lightweight = rc.lightweight || lightweight;
  const ParamSet p = init_rarn(rc, cfg.seed);
  save_checkpoint(p, path);
  out << "wrote " << path << " (" << p.count() << " params, seed " << cfg.seed << ", config " << config_hash(cfg) << ")\n";
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learned precoding for standard video codecs: precode, evaluate, train, verify."};
  app.require_subcommand(1);
  int jobs = 0;
  app.add_option("--jobs", jobs, "cap on parallel encoder processes")->check(CLI::NonNegativeNumber);

  PrecodeArgs pa;
  auto* precode_cmd = app.add_subcommand("precode", "precode a Y4M file with a RARN checkpoint");
  add_common(precode_cmd, pa.common);
  add_target(precode_cmd, pa.target);
  precode_cmd->add_option("--model", pa.model, "RARN checkpoint");
  precode_cmd->add_flag("--lightweight", pa.lightweight, "use the lightweight path");
  precode_cmd->add_option("input", pa.input, "input .y4m")->required();
  precode_cmd->add_option("output", pa.output, "output .y4m")->required();

  EncodeEvalArgs ea;
  auto* ee_cmd = app.add_subcommand("encode-eval", "RD curves per precoding method through the codec ladder");
  add_common(ee_cmd, ea.common);
  add_target(ee_cmd, ea.target);
  ee_cmd->add_option("--model", ea.model, "RARN checkpoint (enables the rarn method)");
  ee_cmd->add_option("--methods", ea.methods, "comma list of bicubic,lanczos,rarn,rarn-lightweight");
  ee_cmd->add_option("--upsample", ea.upsample, "bicubic (default) or lanczos");
  ee_cmd->add_option("input", ea.input, "source .y4m")->required();

  BdArgs ba;
  auto* bd_cmd = app.add_subcommand("bdrate", "Bjontegaard deltas of two curve CSVs");
  bd_cmd->add_option("anchor", ba.anchor, "anchor curve CSV")->required();
  bd_cmd->add_option("test", ba.test, "test curve CSV")->required();
  bd_cmd->add_option("-o,--output", ba.output, "write the JSON report here instead of stdout");

  Common ta;
  auto* train_cmd = app.add_subcommand("train-toy", "alternate RARN/TVC training at toy scale");
  add_common(train_cmd, ta);

  std::vector<std::string> suites;
  auto* gc_cmd = app.add_subcommand("grad-check", "run every finite-difference gradient suite");
  gc_cmd->add_option("--suite", suites, "only these suites");

  BenchArgs be;
  auto* bench_cmd = app.add_subcommand("bench", "precode throughput, full and lightweight");
  add_common(bench_cmd, be.common);
  bench_cmd->add_option("--size", be.size, "frame size WxH");
  bench_cmd->add_option("--scale", be.scale, "downscale factor");
  bench_cmd->add_option("--frames", be.frames, "timed frames per model");

  Common ia;
  bool init_light = false;
  std::string init_out;
  auto* init_cmd = app.add_subcommand("init-model", "write a freshly initialized RARN checkpoint");
  add_common(init_cmd, ia);
  init_cmd->add_flag("--lightweight", init_light, "lightweight architecture");
  init_cmd->add_option("output", init_out, "checkpoint path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*precode_cmd) return cmd_precode(pa, jobs, out);
    if (*ee_cmd) return cmd_encode_eval(ea, jobs, out);
    if (*bd_cmd) return cmd_bdrate(ba, out);
    if (*train_cmd) return cmd_train_toy(ta, jobs, out);
    if (*gc_cmd) return cmd_grad_check(suites, out);
    if (*bench_cmd) return cmd_bench(be, jobs, out);
    if (*init_cmd) return cmd_init_model(ia, init_light, init_out, jobs, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kFailure;
}

}  // namespace precodec::cli
