#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "precodec/codec.hpp"
#include "precodec/rarn.hpp"
#include "precodec/resample.hpp"
#include "precodec/trainer.hpp"
#include "precodec/tvc.hpp"

namespace precodec {

// Procedural training images used when a run has no input files.
struct SyntheticData {
  int count = 8;
  int size = 64;
  std::uint64_t seed = 300;
};

// One JSON document for a whole run. Unknown keys are rejected at every
// level; each section is validated by its owning module.
struct RunConfig {
  std::vector<std::filesystem::path> inputs;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 1;
  // Exactly one of scale / size when a command needs a target resolution.
  std::optional<double> scale;
  std::optional<std::pair<int, int>> size;  // width, height
  std::filesystem::path model;              // RARN checkpoint
  std::vector<std::string> methods{"bicubic", "lanczos"};
  Filter upsample = Filter::kBicubic;
  SyntheticData synthetic{};

  RarnConfig rarn{};
  TvcConfig tvc{};
  TrainConfig train{};
  CodecConfig codec{};

  void validate() const;
  // Copies seed, codec and output_dir/checkpoints into the train section,
  // then validates. Call after changing any of them.
  void finalize();
  // Output extents for an input of the given size.
  ScalePlan plan_for(int width, int height) const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
// Every field, defaults included, as sorted-key JSON.
std::string canonical_json(const RunConfig& cfg);
// 16 hex digits of FNV-1a/64 over canonical_json.
std::string config_hash(const RunConfig& cfg);

// "960x540" -> {960, 540}.
std::pair<int, int> parse_size(const std::string& text);

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m{"bicubic", "lanczos", "rarn", "rarn-lightweight"};
  return m;
}

}  // namespace precodec
