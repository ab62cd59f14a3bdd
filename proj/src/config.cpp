#include "precodec/config.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <set>

#include "precodec/imageio.hpp"

namespace precodec {
namespace {

using nlohmann::json;

// Reads typed fields from one JSON object and rejects what it never asked for.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  void get(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(key, "true or false");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  template <class T>
    requires std::is_integral_v<T>
  void get(const char* key, T& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      if (std::is_unsigned_v<T> && v->is_number_integer() && !v->is_number_unsigned()) fail(key, "a non-negative integer");
      out = v->get<T>();
    }
  }
  void get(const char* key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "an array of numbers");
      out.clear();
      for (const json& e : *v) {
        if (!e.is_number()) fail(key, "an array of numbers");
        out.push_back(e.get<double>());
      }
    }
  }
  void get(const char* key, std::vector<std::string>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "an array of strings");
      out.clear();
      for (const json& e : *v) {
        if (!e.is_string()) fail(key, "an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }
  void get(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }
  template <class E>
  void get_enum(const char* key, E& out, const std::vector<std::pair<std::string, E>>& names) {
    std::string s;
    if (!find(key)) return;
    get(key, s);
    for (const auto& [n, e] : names)
      if (n == s) {
        out = e;
        return;
      }
    std::string allowed;
    for (const auto& [n, e] : names) allowed += (allowed.empty() ? "" : ", ") + n;
    throw ConfigError(where_ + "." + key + ": '" + s + "' is not one of " + allowed);
  }
  const json* sub(const char* key) { return find(key); }
  const json* raw(const char* key) { return find(key); }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown key '" + (where_.empty() ? k : where_ + "." + k) + "'");
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  [[noreturn]] void fail(const char* key, const char* what) const {
    throw ConfigError((where_.empty() ? std::string(key) : where_ + "." + key) + ": expected " + what);
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

const std::vector<std::pair<std::string, Filter>> kFilters{{"bicubic", Filter::kBicubic}, {"lanczos", Filter::kLanczos}};
const std::vector<std::pair<std::string, TvcConfig::Init>> kInits{{"random", TvcConfig::Init::kRandom},
                                                                  {"identity", TvcConfig::Init::kIdentity}};
const std::vector<std::pair<std::string, CodecConfig::Kind>> kKinds{{"mock", CodecConfig::Kind::kMock},
                                                                    {"external", CodecConfig::Kind::kExternal}};
const std::vector<std::pair<std::string, CodecConfig::RateMode>> kRateModes{{"cqp", CodecConfig::RateMode::kCqp},
                                                                            {"two_pass_bitrate", CodecConfig::RateMode::kTwoPassBitrate}};

template <class E>
std::string name_of(E e, const std::vector<std::pair<std::string, E>>& names) {
  for (const auto& [n, v] : names)
    if (v == e) return n;
  return "?";
}

void read_adam(const json& j, const std::string& where, AdamConfig& a) {
  Section s(j, where);
  s.get("lr", a.lr);
  s.get("beta1", a.beta1);
  s.get("beta2", a.beta2);
  s.get("eps", a.eps);
  s.finish();
}

json adam_json(const AdamConfig& a) { return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}}; }

void read_rarn(const json& j, RarnConfig& c) {
  Section s(j, "rarn");
  s.get("feature_channels", c.feature_channels);
  s.get("num_resblocks", c.num_resblocks);
  s.get("taps", c.taps);
  s.get("rate_latent_channels", c.rate_latent_channels);
  s.get("window", c.window);
  s.get("heads", c.heads);
  s.get("mlp_hidden", c.mlp_hidden);
  s.get("mlp_layers", c.mlp_layers);
  s.get("lightweight", c.lightweight);
  s.get("round_query", c.round_query);
  s.finish();
}

void read_tvc(const json& j, TvcConfig& c) {
  Section s(j, "tvc");
  s.get("window", c.window);
  s.get("num_coupling_blocks", c.num_coupling_blocks);
  s.get("num_pre_attention_blocks", c.num_pre_attention_blocks);
  s.get("gop", c.gop);
  s.get("quant_step", c.quant_step);
  s.get("latent_channels", c.latent_channels);
  s.get("heads", c.heads);
  s.get("pool", c.pool);
  s.get("inter_gain", c.inter_gain);
  s.get("residual", c.residual);
  s.get_enum("init", c.init, kInits);
  s.finish();
}

void read_train(const json& j, TrainConfig& c) {
  Section s(j, "train");
  s.get("lambda", c.lambda);
  s.get("lambda_d", c.lambda_d);
  s.get("lambda_r", c.lambda_r);
  if (const json* a = s.sub("rarn_adam")) read_adam(*a, "train.rarn_adam", c.rarn_adam);
  if (const json* a = s.sub("tvc_adam")) read_adam(*a, "train.tvc_adam", c.tvc_adam);
  s.get("steps", c.steps);
  s.get("tvc_steps_per_rarn_step", c.tvc_steps_per_rarn_step);
  s.get("batch", c.batch);
  s.get("crop_size", c.crop_size);
  if (const json* sc = s.sub("scales")) {
    Section ss(*sc, "train.scales");
    ss.get("discrete", c.scales.discrete);
    ss.get("continuous_lo", c.scales.continuous_lo);
    ss.get("continuous_hi", c.scales.continuous_hi);
    ss.get("p_continuous", c.scales.p_continuous);
    ss.finish();
  }
  s.get_enum("anchor_filter", c.anchor_filter, kFilters);
  s.get("rate_alpha", c.rate_alpha);
  s.get("gain_rate", c.gain_rate);
  s.get("tvc_warmup_steps", c.tvc_warmup_steps);
  s.get("codec_point", c.codec_point);
  s.get("gop_mode", c.gop_mode);
  s.get("checkpoint_every", c.checkpoint_every);
  s.finish();
}

void read_codec(const json& j, CodecConfig& c) {
  Section s(j, "codec");
  s.get_enum("kind", c.kind, kKinds);
  s.get("encode_cmd", c.encode_cmd);
  s.get("decode_cmd", c.decode_cmd);
  s.get_enum("rate_mode", c.rate_mode, kRateModes);
  s.get("preset", c.preset);
  s.get("gop", c.gop);
  s.get("ladder", c.ladder);
  s.get("timeout_s", c.timeout_s);
  s.get("max_processes", c.max_processes);
  s.finish();
}

json to_json(const RunConfig& c) {
  json inputs = json::array();
  for (const auto& p : c.inputs) inputs.push_back(p.string());
  json j;
  j["inputs"] = inputs;
  j["output_dir"] = c.output_dir.string();
  j["seed"] = c.seed;
  j["scale"] = c.scale ? json(*c.scale) : json(nullptr);
  j["size"] = c.size ? json::array({c.size->first, c.size->second}) : json(nullptr);
  j["model"] = c.model.string();
  j["methods"] = c.methods;
  j["upsample"] = name_of(c.upsample, kFilters);
  j["synthetic"] = {{"count", c.synthetic.count}, {"size", c.synthetic.size}, {"seed", c.synthetic.seed}};
  const RarnConfig& r = c.rarn;
  j["rarn"] = {{"feature_channels", r.feature_channels}, {"num_resblocks", r.num_resblocks}, {"taps", r.taps},
               {"rate_latent_channels", r.rate_latent_channels}, {"window", r.window}, {"heads", r.heads},
               {"mlp_hidden", r.mlp_hidden}, {"mlp_layers", r.mlp_layers}, {"lightweight", r.lightweight},
               {"round_query", r.round_query}};
  const TvcConfig& t = c.tvc;
  j["tvc"] = {{"window", t.window}, {"num_coupling_blocks", t.num_coupling_blocks},
              {"num_pre_attention_blocks", t.num_pre_attention_blocks}, {"gop", t.gop}, {"quant_step", t.quant_step},
              {"latent_channels", t.latent_channels}, {"heads", t.heads}, {"pool", t.pool}, {"inter_gain", t.inter_gain},
              {"residual", t.residual}, {"init", name_of(t.init, kInits)}};
  const TrainConfig& tr = c.train;
  j["train"] = {{"lambda", tr.lambda}, {"lambda_d", tr.lambda_d}, {"lambda_r", tr.lambda_r},
                {"rarn_adam", adam_json(tr.rarn_adam)}, {"tvc_adam", adam_json(tr.tvc_adam)}, {"steps", tr.steps},
                {"tvc_steps_per_rarn_step", tr.tvc_steps_per_rarn_step}, {"batch", tr.batch}, {"crop_size", tr.crop_size},
                {"scales",
                 {{"discrete", tr.scales.discrete}, {"continuous_lo", tr.scales.continuous_lo},
                  {"continuous_hi", tr.scales.continuous_hi}, {"p_continuous", tr.scales.p_continuous}}},
                {"anchor_filter", name_of(tr.anchor_filter, kFilters)}, {"rate_alpha", tr.rate_alpha},
                {"gain_rate", tr.gain_rate}, {"tvc_warmup_steps", tr.tvc_warmup_steps}, {"codec_point", tr.codec_point},
                {"gop_mode", tr.gop_mode}, {"checkpoint_every", tr.checkpoint_every}};
  const CodecConfig& k = c.codec;
  j["codec"] = {{"kind", name_of(k.kind, kKinds)}, {"encode_cmd", k.encode_cmd}, {"decode_cmd", k.decode_cmd},
                {"rate_mode", name_of(k.rate_mode, kRateModes)}, {"preset", k.preset}, {"gop", k.gop},
                {"ladder", k.ladder}, {"timeout_s", k.timeout_s}, {"max_processes", k.max_processes}};
  return j;
}

}  // namespace

std::pair<int, int> parse_size(const std::string& text) {
  int w = 0, h = 0;
  char x = 0, extra = 0;
  if (std::sscanf(text.c_str(), "%d%c%d%c", &w, &x, &h, &extra) != 3 || (x != 'x' && x != 'X') || w <= 0 || h <= 0)
    throw ConfigError("size '" + text + "' is not WIDTHxHEIGHT");
  return {w, h};
}

void RunConfig::validate() const {
  if (scale && size) throw ConfigError("scale and size are mutually exclusive");
  if (scale && !(*scale >= 1.0 && std::isfinite(*scale))) throw ConfigError("scale must be finite and >= 1");
  if (size && (size->first <= 0 || size->second <= 0)) throw ConfigError("size extents must be positive");
  if (methods.empty()) throw ConfigError("methods is empty");
  for (const auto& m : methods)
    if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
      throw ConfigError("unknown method '" + m + "'");
  if (synthetic.count <= 0 || synthetic.size <= 0) throw ConfigError("synthetic count and size must be positive");
  rarn.validate();
  tvc.validate();
  train.validate();
  codec.validate();
}

void RunConfig::finalize() {
  train.seed = seed;
  train.codec = codec;
  train.checkpoint_dir = output_dir / "checkpoints";
  validate();
}

ScalePlan RunConfig::plan_for(int width, int height) const {
  if (size) return make_plan(height, width, size->second, size->first);
  if (scale) return plan_for_scale(height, width, *scale);
  throw ConfigError("no target resolution: give scale or size");
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section s(j, "");
  if (const json* in = s.raw("inputs")) {
    if (!in->is_array()) throw ConfigError("inputs: expected an array of strings");
    for (const json& e : *in) {
      if (!e.is_string()) throw ConfigError("inputs: expected an array of strings");
      c.inputs.emplace_back(e.get<std::string>());
    }
  }
  s.get("output_dir", c.output_dir);
  s.get("seed", c.seed);
  if (const json* v = s.raw("scale"); v && !v->is_null()) {
    if (!v->is_number()) throw ConfigError("scale: expected a number");
    c.scale = v->get<double>();
  }
  if (const json* v = s.raw("size"); v && !v->is_null()) {
    if (v->is_string()) {
      c.size = parse_size(v->get<std::string>());
    } else if (v->is_array() && v->size() == 2 && (*v)[0].is_number_integer() && (*v)[1].is_number_integer()) {
      c.size = {(*v)[0].get<int>(), (*v)[1].get<int>()};
    } else {
      throw ConfigError("size: expected \"WxH\" or [width, height]");
    }
  }
  s.get("model", c.model);
  s.get("methods", c.methods);
  s.get_enum("upsample", c.upsample, kFilters);
  if (const json* v = s.sub("synthetic")) {
    Section ss(*v, "synthetic");
    ss.get("count", c.synthetic.count);
    ss.get("size", c.synthetic.size);
    ss.get("seed", c.synthetic.seed);
    ss.finish();
  }
  if (const json* v = s.sub("rarn")) read_rarn(*v, c.rarn);
  if (const json* v = s.sub("tvc")) read_tvc(*v, c.tvc);
  if (const json* v = s.sub("train")) read_train(*v, c.train);
  if (const json* v = s.sub("codec")) read_codec(*v, c.codec);
  s.finish();
  c.finalize();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_file(path)); }

std::string canonical_json(const RunConfig& cfg) { return to_json(cfg).dump(); }

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : canonical_json(cfg)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

}  // namespace precodec
