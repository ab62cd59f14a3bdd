#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "precodec/imageio.hpp"

namespace precodec {

struct CodecConfig {
  enum class Kind { kMock, kExternal };
  enum class RateMode { kTwoPassBitrate, kCqp };

  Kind kind = Kind::kMock;
  // Placeholders: {in} {out} {bitrate_kbps} {qp} {gop} {preset} {width}
  // {height} {fps}. Encode reads {in} (y4m) and writes the bitstream {out};
  // decode reads {in} (the bitstream) and writes {out} (y4m).
  std::string encode_cmd;
  std::string decode_cmd;
  RateMode rate_mode = RateMode::kCqp;
  std::string preset = "medium";
  int gop = 30;
  std::vector<double> ladder{37, 32, 27, 22};
  double timeout_s = 600.0;
  // Parallel ladder points; 0 defers to PRECODEC_MAX_ENCODERS (default 1).
  int max_processes = 0;

  void validate() const;
};

// Two-pass libx265 through ffmpeg.
CodecConfig x265_two_pass_config(std::vector<double> ladder_kbps);

struct EncodeResult {
  VideoSeq decoded;
  std::int64_t bits_total = 0;
  double kbps = 0.0;
  double ladder_point = 0.0;
};

EncodeResult encode_decode(const VideoSeq& seq, const CodecConfig& cfg, double point);
std::vector<EncodeResult> run_ladder(const VideoSeq& seq, const CodecConfig& cfg);

// Mock intra codec: 8x8 integer DCT per plane on (sample - 128), HEVC-style
// scalar quantization at `qp`, reconstruction and clamping.
struct MockFrameResult {
  Frame decoded;
  std::int64_t bits = 0;
};
MockFrameResult mock_code_frame(const Frame& frame, int qp);
// Quantization step of a QP: 2^((qp - 4) / 6).
double qp_step(int qp);

// Expands {name} placeholders; unknown placeholders raise ConfigError.
std::string expand_template(const std::string& tmpl, const std::vector<std::pair<std::string, std::string>>& values);

struct ProcessResult {
  int exit_code = 0;
  bool timed_out = false;
  std::string output;
};
// Runs `command` through /bin/sh in `cwd`, capturing stdout and stderr.
ProcessResult run_shell(const std::string& command, const std::filesystem::path& cwd, double timeout_s);

int encoder_process_cap(const CodecConfig& cfg);
// True when `name` resolves on PATH.
bool executable_on_path(const std::string& name);

}  // namespace precodec
