#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "precodec/random.hpp"
#include "precodec/tensor.hpp"

namespace precodec {

// Named collection of model tensors, iterated in name order.
class ParamSet {
 public:
  void add(const std::string& name, Tensor value);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  // Replaces an existing entry; the shape must not change.
  void set(const std::string& name, Tensor value);

  std::vector<std::string> names() const;
  const std::map<std::string, Tensor>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }
  Index count() const;

  // Copies sharing storage, flagged as trainable / constant leaves.
  ParamSet trainable() const;
  ParamSet frozen() const;

  bool bitwise_equal(const ParamSet& other) const;

 private:
  std::map<std::string, Tensor> params_;
};

// Initializers used by the model builders.
Tensor init_normal(Rng& rng, Shape shape, double stddev);
Tensor init_conv(Rng& rng, Index out_c, Index in_c, Index kh, Index kw, double gain = 1.0);
Tensor init_linear(Rng& rng, Index out_f, Index in_f, double gain = 1.0);

// Checkpoint container: magic "PCKP", version byte, record count, then per
// record (name, dtype, rank, extents, raw little-endian values).
inline constexpr char kCheckpointMagic[4] = {'P', 'C', 'K', 'P'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const ParamSet& params);
ParamSet parse_checkpoint(const std::string& bytes);
void save_checkpoint(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_checkpoint(const std::filesystem::path& path);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment optimizer over a ParamSet. Entries without a gradient
// from the last backward pass are left untouched.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}
  void step(ParamSet& params);
  const AdamConfig& config() const { return config_; }
  long steps() const { return t_; }

 private:
  AdamConfig config_;
  long t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace precodec
