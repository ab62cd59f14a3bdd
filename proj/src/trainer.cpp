#include "precodec/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "precodec/ops.hpp"

namespace precodec {

double ScaleSampling::sample(Rng& rng) const {
  const double u = rng.uniform();
  if (discrete.empty() || u < p_continuous) return rng.uniform(continuous_lo, continuous_hi);
  return discrete[rng.below(discrete.size())];
}

void ScaleSampling::validate() const {
  for (double s : discrete)
    if (!(s >= 1.0)) throw ConfigError("scale factors must be >= 1");
  if (p_continuous < 0 || p_continuous > 1) throw ConfigError("p_continuous must be in [0,1]");
  if (p_continuous > 0 && !(continuous_lo >= 1.0 && continuous_hi >= continuous_lo))
    throw ConfigError("continuous scale range must satisfy 1 <= lo <= hi");
  if (discrete.empty() && p_continuous == 0) throw ConfigError("scale sampling has no support");
}

void TrainConfig::validate() const {
  if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
  if (!(lambda_d > 0) || !(lambda_r > 0)) throw ConfigError("lambda_d and lambda_r must be positive");
  if (!(rarn_adam.lr >= 0) || !(tvc_adam.lr >= 0)) throw ConfigError("learning rates must be >= 0");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (tvc_steps_per_rarn_step < 0) throw ConfigError("tvc_steps_per_rarn_step must be >= 0");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (crop_size < 8) throw ConfigError("crop_size must be >= 8");
  if (!(rate_alpha >= 0)) throw ConfigError("rate_alpha must be >= 0");
  if (!(gain_rate >= 0 && gain_rate <= 1)) throw ConfigError("gain_rate must be in [0,1]");
  if (tvc_warmup_steps < 0) throw ConfigError("tvc_warmup_steps must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (checkpoint_every > 0 && checkpoint_dir.empty()) throw ConfigError("checkpoint_every needs checkpoint_dir");
  scales.validate();
  CodecConfig single = codec;
  single.ladder = {codec_point};
  single.validate();
}

RdTerms rd_loss(const Tensor& x, const Tensor& y, const Tensor& y_tilde, const Tensor& r_tvc_bits, const Tensor& r_f_bits,
                const TrainConfig& cfg) {
  if (x.rank() != 4 || y.rank() != 4 || y.shape() != y_tilde.shape())
    throw InvalidShape("rd_loss: x " + shape_str(x.shape()) + ", y " + shape_str(y.shape()) + ", y~ " +
                       shape_str(y_tilde.shape()));
  if (r_tvc_bits.numel() != 1 || r_f_bits.numel() != 1) throw InvalidShape("rd_loss: rates must be single elements");
  const Index H = x.dim(2), W = x.dim(3);
  const Tensor up = resize_to(y_tilde, H, W, Filter::kBicubic);
  const Tensor anchor = resize_to(x.detach(), y.dim(2), y.dim(3), cfg.anchor_filter);
  RdTerms t;
  t.D = add(mse(x, up), mul_scalar(mse(y, anchor), cfg.lambda_d));
  t.R = mul_scalar(add(r_tvc_bits, mul_scalar(r_f_bits, cfg.lambda_r)), 1.0 / double(H * W));
  t.L = cfg.lambda == 0.0 ? t.D : add(t.D, mul_scalar(t.R, cfg.lambda));
  return t;
}

namespace {

// The optimized objective is MSE plus the prior's code length on detached
// latents (trains prior.log_scale only). The gain is then moved toward the
// value that makes the batch rate match the codec; L_tvc is reported with the
// calibration term evaluated before that move.
TvcFitStats finish_fit(Tape& tape, const Tensor& mse_sum, const Tensor& bits_sum, const std::vector<Tensor>& latents,
                       double n, double measured_bits, double alpha, double gain_rate, ParamSet& trainable,
                       ParamSet& tvc, Adam& adam) {
  TvcFitStats st;
  Tensor objective;
  {
    auto rec = tape.record();
    const Tensor m = mul_scalar(mse_sum, 1.0 / n);
    st.mse = m.item();
    objective = m;
    Tensor aux;
    double count = 0;
    for (const Tensor& w : latents) {
      if (!w.defined()) continue;
      const Tensor b = logistic_bits(w.detach(), trainable.at("prior.log_scale"));
      aux = aux.defined() ? add(aux, b) : b;
      count += double(w.numel());
    }
    if (aux.defined()) objective = add(m, mul_scalar(aux, 1.0 / count));
  }
  const double bits = bits_sum.item();
  if (measured_bits > 0) {
    st.rate_ratio = bits / measured_bits;
    st.calibration = alpha * (st.rate_ratio - 1.0) * (st.rate_ratio - 1.0);
  }
  st.loss = st.mse + st.calibration;
  if (!std::isfinite(st.loss) || !std::isfinite(objective.item())) throw NumericError("non-finite TVC loss");
  tape.backward(objective);
  adam.step(trainable);
  tvc = trainable.frozen();
  // a zero learning rate freezes the calibration as well
  if (measured_bits > 0 && bits > 0 && gain_rate > 0 && adam.config().lr > 0) {
    const double g = tvc.at("prior.log_gain").item();
    const double target = std::log(measured_bits / (bits / std::exp(g)));
    tvc.set("prior.log_gain", Tensor::scalar(g + gain_rate * (target - g)));
  }
  return st;
}

void check_batch(std::size_t a, std::size_t b) {
  if (a != b || a == 0)
    throw InvalidArgument("tvc_fit_step: " + std::to_string(a) + " inputs but " + std::to_string(b) + " codec outputs");
}

}  // namespace

TvcFitStats tvc_fit_step(const std::vector<Tensor>& ys, const std::vector<Tensor>& targets, double measured_bits,
                         ParamSet& tvc, const TvcConfig& tvc_cfg, Adam& adam, Rng& rng, double alpha, double gain_rate) {
  check_batch(ys.size(), targets.size());
  ParamSet trainable = tvc.trainable();
  Tape tape;
  Tensor mse_sum, bits_sum;
  std::vector<Tensor> latents;
  {
    auto rec = tape.record();
    const Quantizer q{true, &rng};
    for (std::size_t i = 0; i < ys.size(); ++i) {
      if (ys[i].shape() != targets[i].shape())
        throw InvalidShape("tvc_fit_step: input " + shape_str(ys[i].shape()) + " vs target " + shape_str(targets[i].shape()));
      CodeResult r = intra_code(ys[i].detach(), trainable, tvc_cfg, q);
      const Tensor m = mse(r.decoded, targets[i].detach());
      mse_sum = i == 0 ? m : add(mse_sum, m);
      bits_sum = i == 0 ? r.bits : add(bits_sum, r.bits);
      latents.push_back(r.latent);
    }
  }
  return finish_fit(tape, mse_sum, bits_sum, latents, double(ys.size()), measured_bits, alpha, gain_rate, trainable, tvc,
                    adam);
}

TvcFitStats tvc_fit_gop_step(const std::vector<std::vector<Tensor>>& gops, const std::vector<std::vector<Tensor>>& targets,
                             double measured_bits, ParamSet& tvc, const TvcConfig& tvc_cfg, Adam& adam, Rng& rng,
                             double alpha, double gain_rate) {
  check_batch(gops.size(), targets.size());
  ParamSet trainable = tvc.trainable();
  Tape tape;
  Tensor mse_sum, bits_sum;
  std::vector<Tensor> latents;
  double n = 0;
  {
    auto rec = tape.record();
    const Quantizer q{true, &rng};
    for (std::size_t i = 0; i < gops.size(); ++i) {
      check_batch(gops[i].size(), targets[i].size());
      std::vector<Tensor> frames;
      for (const Tensor& f : gops[i]) frames.push_back(f.detach());
      GopResult g = code_gop(frames, trainable, tvc_cfg, q);
      for (std::size_t k = 0; k < g.decoded.size(); ++k) {
        const Tensor m = mse(g.decoded[k], targets[i][k].detach());
        mse_sum = mse_sum.defined() ? add(mse_sum, m) : m;
        n += 1;
      }
      bits_sum = bits_sum.defined() ? add(bits_sum, g.total_bits) : g.total_bits;
      latents.insert(latents.end(), g.latents.begin(), g.latents.end());
    }
  }
  return finish_fit(tape, mse_sum, bits_sum, latents, n, measured_bits, alpha, gain_rate, trainable, tvc, adam);
}

std::string TrainReport::csv() const {
  std::string s = "step,L,D,R,L_tvc\n";
  char buf[160];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.step, r.L, r.D, r.R, r.L_tvc);
    s += buf;
  }
  return s;
}

std::string TrainReport::json_summary() const {
  nlohmann::ordered_json j;
  j["steps"] = records.size();
  j["seed"] = seed;
  j["lambda"] = lambda;
  j["wall_seconds"] = wall_seconds;
  auto adam_json = [](const AdamConfig& a) {
    return nlohmann::ordered_json{{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
  };
  j["optimizer"] = {{"rarn", adam_json(rarn_adam)}, {"tvc", adam_json(tvc_adam)}};
  if (!records.empty()) {
    j["first"] = {{"L", records.front().L}, {"D", records.front().D}, {"R", records.front().R}, {"L_tvc", records.front().L_tvc}};
    j["last"] = {{"L", records.back().L}, {"D", records.back().D}, {"R", records.back().R}, {"L_tvc", records.back().L_tvc}};
  }
  j["checkpoints"] = checkpoints;
  return j.dump(2) + "\n";
}

namespace {

Tensor crop_at(const Tensor& img, Index top, Index left, Index size) { return crop(img, top, left, size, size).detach(); }

void write_checkpoints(TrainReport& report, const TrainConfig& cfg, const ParamSet& rarn, const ParamSet& tvc,
                       const std::string& tag) {
  if (cfg.checkpoint_dir.empty()) return;
  std::filesystem::create_directories(cfg.checkpoint_dir);
  const auto pr = cfg.checkpoint_dir / ("rarn_" + tag + ".ckpt");
  const auto pt = cfg.checkpoint_dir / ("tvc_" + tag + ".ckpt");
  save_checkpoint(rarn, pr);
  save_checkpoint(tvc, pt);
  report.checkpoints.push_back(pr.string());
  report.checkpoints.push_back(pt.string());
}

}  // namespace

TrainResult alternate_train(const std::vector<std::vector<Tensor>>& data, const RarnConfig& rarn_cfg,
                            const TvcConfig& tvc_cfg, const TrainConfig& cfg, const ParamSet* rarn_init,
                            const ParamSet* tvc_init) {
  cfg.validate();
  rarn_cfg.validate();
  tvc_cfg.validate();
  if (data.empty()) throw InvalidArgument("alternate_train: no training data");
  for (const auto& item : data) {
    if (item.empty() || (cfg.gop_mode && item.size() < 3))
      throw InvalidArgument(cfg.gop_mode ? "gop mode needs clips of at least 3 frames" : "empty training item");
    for (const Tensor& f : item)
      if (f.rank() != 4 || f.dim(0) != 1 || f.dim(1) != 3 || f.dim(2) < cfg.crop_size || f.dim(3) < cfg.crop_size)
        throw InvalidShape("training frame " + shape_str(f.shape()) + " is smaller than crop " + std::to_string(cfg.crop_size));
  }
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res;
  res.rarn = rarn_init ? *rarn_init : init_rarn(rarn_cfg, cfg.seed);
  res.tvc = tvc_init ? *tvc_init : init_tvc(tvc_cfg, cfg.seed + 1);
  check_rarn_params(rarn_cfg, res.rarn);
  check_tvc_params(tvc_cfg, res.tvc);
  res.report.rarn_adam = cfg.rarn_adam;
  res.report.tvc_adam = cfg.tvc_adam;
  res.report.lambda = cfg.lambda;
  res.report.seed = cfg.seed;
  write_checkpoints(res.report, cfg, res.rarn, res.tvc, "init");

  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 17);
  Adam rarn_opt(cfg.rarn_adam), tvc_opt(cfg.tvc_adam);
  const int nframes = cfg.gop_mode ? 3 : 1;

  auto sample_batch = [&]() {
    std::vector<std::vector<Tensor>> xs(std::size_t(cfg.batch));
    for (auto& clip : xs) {
      const auto& item = data[rng.below(data.size())];
      const std::size_t first = cfg.gop_mode ? rng.below(item.size() - 2) : rng.below(item.size());
      const Tensor& f0 = item[first];
      const Index top = Index(rng.below(std::uint64_t(f0.dim(2) - cfg.crop_size + 1)));
      const Index left = Index(rng.below(std::uint64_t(f0.dim(3) - cfg.crop_size + 1)));
      for (int k = 0; k < nframes; ++k) clip.push_back(crop_at(item[first + std::size_t(k)], top, left, cfg.crop_size));
    }
    return xs;
  };
  auto fit_proxy = [&](const std::vector<std::vector<Tensor>>& ys, const std::vector<std::vector<Tensor>>& targets,
                       double measured) {
    if (cfg.gop_mode) return tvc_fit_gop_step(ys, targets, measured, res.tvc, tvc_cfg, tvc_opt, rng, cfg.rate_alpha, cfg.gain_rate);
    std::vector<Tensor> flat_y, flat_t;
    for (std::size_t b = 0; b < ys.size(); ++b) {
      flat_y.push_back(ys[b][0]);
      flat_t.push_back(targets[b][0]);
    }
    return tvc_fit_step(flat_y, flat_t, measured, res.tvc, tvc_cfg, tvc_opt, rng, cfg.rate_alpha, cfg.gain_rate);
  };
  auto run_codec = [&](std::vector<std::vector<Tensor>>& ys, std::vector<std::vector<Tensor>>& targets) {
    double measured = 0;
    for (std::size_t b = 0; b < ys.size(); ++b)
      for (const Tensor& y : ys[b]) {
        CodecPass cp = codec_pass(y, cfg.codec, cfg.codec_point);
        targets[b].push_back(cp.decoded);
        measured += double(cp.bits);
      }
    return measured;
  };

  // proxy warm-up on the current (fixed) precoder output
  for (int w = 0; w < cfg.tvc_warmup_steps; ++w) {
    const ScalePlan plan = plan_for_scale(cfg.crop_size, cfg.crop_size, cfg.scales.sample(rng));
    auto xs = sample_batch();
    std::vector<std::vector<Tensor>> ys(xs.size()), targets(xs.size());
    for (std::size_t b = 0; b < xs.size(); ++b)
      for (const Tensor& x : xs[b]) ys[b].push_back(precode(x, plan, res.rarn, rarn_cfg).y.detach());
    fit_proxy(ys, targets, run_codec(ys, targets));
  }

  for (int step = 0; step < cfg.steps; ++step) try {
    TrainRecord rec;
    rec.step = step;
    // (1) crops and scale
    const double S = cfg.scales.sample(rng);
    rec.scale = S;
    const ScalePlan plan = plan_for_scale(cfg.crop_size, cfg.crop_size, S);
    auto xs = sample_batch();

    // (2) precode in train mode, kept on the RARN tape
    ParamSet rarn_train = res.rarn.trainable();
    Tape rarn_tape;
    std::vector<std::vector<RarnOutput>> outs(xs.size());
    {
      auto r = rarn_tape.record();
      const Quantizer q{true, &rng};
      for (std::size_t b = 0; b < xs.size(); ++b)
        for (const Tensor& x : xs[b]) outs[b].push_back(precode(x, plan, rarn_train, rarn_cfg, q));
    }

    // (3) codec on the detached output
    std::vector<std::vector<Tensor>> ys(xs.size()), targets(xs.size());
    for (std::size_t b = 0; b < xs.size(); ++b)
      for (const RarnOutput& o : outs[b]) ys[b].push_back(o.y.detach());
    const double measured = run_codec(ys, targets);

    // (4) proxy fit
    for (int k = 0; k < cfg.tvc_steps_per_rarn_step; ++k) rec.L_tvc = fit_proxy(ys, targets, measured).loss;

    // (5) RARN step through the frozen proxy
    Tensor loss, d_sum, r_sum;
    {
      auto r = rarn_tape.record();
      const ParamSet tvc_frozen = res.tvc.frozen();
      const Quantizer q{true, &rng};
      for (std::size_t b = 0; b < xs.size(); ++b) {
        std::vector<Tensor> y_in;
        for (const RarnOutput& o : outs[b]) y_in.push_back(o.y);
        std::vector<Tensor> decoded;
        std::vector<Tensor> bits;
        if (cfg.gop_mode) {
          GopResult g = code_gop(y_in, tvc_frozen, tvc_cfg, q);
          decoded = g.decoded;
          bits = g.bits;
        } else {
          CodeResult c = intra_code(y_in[0], tvc_frozen, tvc_cfg, q);
          decoded = {c.decoded};
          bits = {c.bits};
        }
        for (std::size_t k = 0; k < decoded.size(); ++k) {
          RdTerms t = rd_loss(xs[b][k], outs[b][k].y, decoded[k], bits[k], outs[b][k].rate_bits, cfg);
          loss = loss.defined() ? add(loss, t.L) : t.L;
          d_sum = d_sum.defined() ? add(d_sum, t.D) : t.D;
          r_sum = r_sum.defined() ? add(r_sum, t.R) : t.R;
        }
      }
      const double n = double(xs.size()) * nframes;
      loss = mul_scalar(loss, 1.0 / n);
      rec.D = d_sum.item() / n;
      rec.R = r_sum.item() / n;
    }
    rec.L = loss.item();
    if (!std::isfinite(rec.L) || !std::isfinite(rec.L_tvc))
      throw NumericError("training aborted at step " + std::to_string(step) + ": non-finite loss");
    rarn_tape.backward(loss);
    rarn_opt.step(rarn_train);
    res.rarn = rarn_train.frozen();
    res.report.records.push_back(rec);
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
      write_checkpoints(res.report, cfg, res.rarn, res.tvc, "step" + std::to_string(step + 1));
  } catch (const NumericError& e) {
    const std::string what = e.what();
    if (what.rfind("training aborted", 0) == 0) throw;
    throw NumericError("training aborted at step " + std::to_string(step) + ": " + what);
  }
  res.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

EvalRd eval_rd_loss(const std::vector<Tensor>& crops, double scale, const Precoder& precoder, const TrainConfig& cfg) {
  if (crops.empty()) throw InvalidArgument("eval_rd_loss: no crops");
  EvalRd e;
  double sse = 0, count = 0;
  for (const Tensor& x : crops) {
    const ScalePlan plan = plan_for_scale(x.dim(2), x.dim(3), scale);
    Precoded p = precoder(x, plan);
    CodecPass cp = codec_pass(p.y, cfg.codec, cfg.codec_point);
    const Tensor bits = Tensor::scalar(double(cp.bits));
    const Tensor side = Tensor::scalar(p.side_bits);
    RdTerms t = rd_loss(x, p.y, cp.decoded, bits, side, cfg);
    e.L += t.L.item();
    e.D += t.D.item();
    e.bpp += double(cp.bits) / double(x.dim(2) * x.dim(3));
    const Tensor up = resize_to(cp.decoded, x.dim(2), x.dim(3), Filter::kBicubic);
    const Tensor xy = slice(x, 1, 0, 1), uy = slice(up, 1, 0, 1);
    const auto a = xy.data(), b = uy.data();
    for (std::size_t i = 0; i < a.size(); ++i) sse += (a[i] - b[i]) * (a[i] - b[i]);
    count += double(a.size());
  }
  const double n = double(crops.size());
  e.L /= n;
  e.D /= n;
  e.bpp /= n;
  e.psnr = 10.0 * std::log10(1.0 / (sse / count));
  return e;
}

std::vector<Tensor> take_crops(const std::vector<Tensor>& images, int size, int count, std::uint64_t seed) {
  if (images.empty()) throw InvalidArgument("take_crops: no images");
  Rng rng(seed);
  std::vector<Tensor> out;
  for (int i = 0; i < count; ++i) {
    const Tensor& img = images[std::size_t(i) % images.size()];
    if (img.dim(2) < size || img.dim(3) < size) throw InvalidShape("crop larger than image");
    const Index top = Index(rng.below(std::uint64_t(img.dim(2) - size + 1)));
    const Index left = Index(rng.below(std::uint64_t(img.dim(3) - size + 1)));
    out.push_back(crop_at(img, top, left, size));
  }
  return out;
}

}  // namespace precodec
