#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "precodec/tensor.hpp"

namespace precodec {

// 8-bit planar 4:2:0 picture.
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> y, u, v;

  Frame() = default;
  Frame(int w, int h, std::uint8_t luma = 0, std::uint8_t chroma = 128);

  int chroma_width() const { return (width + 1) / 2; }
  int chroma_height() const { return (height + 1) / 2; }
  // Raises InvalidShape when plane sizes disagree with the extents.
  void validate() const;

  bool operator==(const Frame&) const = default;
};

struct VideoSeq {
  std::vector<Frame> frames;
  int fps_num = 30;
  int fps_den = 1;

  int width() const { return frames.empty() ? 0 : frames.front().width; }
  int height() const { return frames.empty() ? 0 : frames.front().height; }
  double fps() const { return static_cast<double>(fps_num) / fps_den; }
  void validate() const;
};

struct Y4mHeader {
  int width = 0;
  int height = 0;
  int fps_num = 30;
  int fps_den = 1;
};

Y4mHeader parse_y4m_header(const std::string& line);

VideoSeq read_y4m(const std::filesystem::path& path);
void write_y4m(const VideoSeq& seq, const std::filesystem::path& path);
VideoSeq decode_y4m(const std::string& bytes);
std::string encode_y4m(const VideoSeq& seq);

VideoSeq read_raw_yuv(const std::filesystem::path& path, int width, int height, int fps_num = 30, int fps_den = 1);
void write_raw_yuv(const VideoSeq& seq, const std::filesystem::path& path);

// YUV in [0,1] at full resolution; chroma is upsampled bilinearly with
// chroma sample (i,j) sited on luma (2i,2j).
Tensor frame_to_tensor(const Frame& frame);
// Inverse: 2x2 box-downsampled chroma; values clamped to [0,1] and rounded
// half away from zero.
Frame tensor_to_frame(const Tensor& t);

// [1,1,H,W] luma-only view in [0,1].
Tensor luma_to_tensor(const Frame& frame);

std::uint8_t quantize_sample(double v);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace precodec
