#include "precodec/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace precodec {

Frame::Frame(int w, int h, std::uint8_t luma, std::uint8_t chroma) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw InvalidShape("frame extents must be positive");
  y.assign(static_cast<std::size_t>(w) * h, luma);
  const std::size_t cn = static_cast<std::size_t>(chroma_width()) * chroma_height();
  u.assign(cn, chroma);
  v.assign(cn, chroma);
}

void Frame::validate() const {
  if (width <= 0 || height <= 0) throw InvalidShape("frame extents must be positive");
  const std::size_t cn = static_cast<std::size_t>(chroma_width()) * chroma_height();
  if (y.size() != static_cast<std::size_t>(width) * height || u.size() != cn || v.size() != cn)
    throw InvalidShape("frame planes do not match " + std::to_string(width) + "x" + std::to_string(height));
}

void VideoSeq::validate() const {
  if (fps_num <= 0 || fps_den <= 0) throw InvalidArgument("frame rate must be positive");
  for (const Frame& f : frames) {
    f.validate();
    if (f.width != width() || f.height != height()) throw InvalidShape("frames differ in size");
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

namespace {

int parse_positive(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size() || v <= 0) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw CorruptStream("bad " + what + " in y4m header: '" + s + "'");
  }
}

std::size_t payload_size(int w, int h) {
  const std::size_t c = static_cast<std::size_t>((w + 1) / 2) * ((h + 1) / 2);
  return static_cast<std::size_t>(w) * h + 2 * c;
}

void append_planes(std::string& out, const Frame& f) {
  out.append(reinterpret_cast<const char*>(f.y.data()), f.y.size());
  out.append(reinterpret_cast<const char*>(f.u.data()), f.u.size());
  out.append(reinterpret_cast<const char*>(f.v.data()), f.v.size());
}

Frame frame_from_payload(const char* p, int w, int h) {
  Frame f(w, h);
  auto fill = [&p](std::vector<std::uint8_t>& plane) {
    std::copy(p, p + plane.size(), reinterpret_cast<char*>(plane.data()));
    p += plane.size();
  };
  fill(f.y);
  fill(f.u);
  fill(f.v);
  return f;
}

}  // namespace

Y4mHeader parse_y4m_header(const std::string& line) {
  std::istringstream ss(line);
  std::string tok;
  ss >> tok;
  if (tok != "YUV4MPEG2") throw CorruptStream("missing YUV4MPEG2 signature");
  Y4mHeader h;
  bool have_w = false, have_h = false;
  while (ss >> tok) {
    const char key = tok[0];
    const std::string val = tok.substr(1);
    switch (key) {
      case 'W': h.width = parse_positive(val, "width"); have_w = true; break;
      case 'H': h.height = parse_positive(val, "height"); have_h = true; break;
      case 'F': {
        const auto colon = val.find(':');
        if (colon == std::string::npos) throw CorruptStream("bad frame rate '" + val + "'");
        h.fps_num = parse_positive(val.substr(0, colon), "frame rate");
        h.fps_den = parse_positive(val.substr(colon + 1), "frame rate");
        break;
      }
      case 'I':
        if (val != "p" && val != "?") throw UnsupportedFormat("only progressive y4m is supported (I" + val + ")");
        break;
      case 'C':
        if (val.rfind("420", 0) != 0 || val.find("p10") != std::string::npos || val.find("p12") != std::string::npos)
          throw UnsupportedFormat("unsupported y4m colorspace C" + val);
        break;
      default:
        break;  // A (aspect) and X (extensions) carry nothing we need
    }
  }
  if (!have_w || !have_h) throw CorruptStream("y4m header lacks W or H");
  return h;
}

VideoSeq decode_y4m(const std::string& bytes) {
  const auto eol = bytes.find('\n');
  if (eol == std::string::npos) throw CorruptStream("unterminated y4m header");
  const Y4mHeader h = parse_y4m_header(bytes.substr(0, eol));
  VideoSeq seq;
  seq.fps_num = h.fps_num;
  seq.fps_den = h.fps_den;
  const std::size_t need = payload_size(h.width, h.height);
  std::size_t pos = eol + 1;
  while (pos < bytes.size()) {
    const auto fe = bytes.find('\n', pos);
    if (fe == std::string::npos || bytes.compare(pos, 5, "FRAME") != 0)
      throw CorruptStream("bad FRAME marker at frame " + std::to_string(seq.frames.size()));
    pos = fe + 1;
    if (bytes.size() - pos < need)
      throw CorruptStream("truncated payload in frame " + std::to_string(seq.frames.size()));
    seq.frames.push_back(frame_from_payload(bytes.data() + pos, h.width, h.height));
    pos += need;
  }
  return seq;
}

std::string encode_y4m(const VideoSeq& seq) {
  seq.validate();
  if (seq.frames.empty()) throw InvalidArgument("cannot write an empty sequence");
  std::string out = "YUV4MPEG2 W" + std::to_string(seq.width()) + " H" + std::to_string(seq.height()) + " F" +
                    std::to_string(seq.fps_num) + ":" + std::to_string(seq.fps_den) + " Ip A1:1 C420jpeg\n";
  for (const Frame& f : seq.frames) {
    out += "FRAME\n";
    append_planes(out, f);
  }
  return out;
}

VideoSeq read_y4m(const std::filesystem::path& path) { return decode_y4m(read_file(path)); }

void write_y4m(const VideoSeq& seq, const std::filesystem::path& path) { write_file(path, encode_y4m(seq)); }

VideoSeq read_raw_yuv(const std::filesystem::path& path, int width, int height, int fps_num, int fps_den) {
  if (width <= 0 || height <= 0) throw InvalidArgument("raw yuv extents must be positive");
  const std::string bytes = read_file(path);
  const std::size_t need = payload_size(width, height);
  if (bytes.size() % need != 0)
    throw CorruptStream(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of " +
                        std::to_string(need));
  VideoSeq seq;
  seq.fps_num = fps_num;
  seq.fps_den = fps_den;
  for (std::size_t pos = 0; pos < bytes.size(); pos += need)
    seq.frames.push_back(frame_from_payload(bytes.data() + pos, width, height));
  return seq;
}

void write_raw_yuv(const VideoSeq& seq, const std::filesystem::path& path) {
  seq.validate();
  std::string out;
  for (const Frame& f : seq.frames) append_planes(out, f);
  write_file(path, out);
}

std::uint8_t quantize_sample(double v) {
  const double c = std::clamp(v, 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::round(c));  // std::round is half away from zero
}

Tensor frame_to_tensor(const Frame& f) {
  f.validate();
  const int w = f.width, h = f.height, cw = f.chroma_width(), ch = f.chroma_height();
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  std::vector<double> out(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) out[i] = f.y[i] / 255.0;
  auto upsample = [&](const std::vector<std::uint8_t>& c, double* dst) {
    for (int yy = 0; yy < h; ++yy) {
      const int y0 = std::min(yy / 2, ch - 1), y1 = std::min(y0 + 1, ch - 1);
      const double fy = (yy % 2) * 0.5;
      for (int xx = 0; xx < w; ++xx) {
        const int x0 = std::min(xx / 2, cw - 1), x1 = std::min(x0 + 1, cw - 1);
        const double fx = (xx % 2) * 0.5;
        const double top = c[y0 * cw + x0] * (1 - fx) + c[y0 * cw + x1] * fx;
        const double bot = c[y1 * cw + x0] * (1 - fx) + c[y1 * cw + x1] * fx;
        dst[yy * w + xx] = (top * (1 - fy) + bot * fy) / 255.0;
      }
    }
  };
  upsample(f.u, out.data() + plane);
  upsample(f.v, out.data() + 2 * plane);
  return Tensor::from({1, 3, h, w}, std::move(out));
}

Tensor luma_to_tensor(const Frame& f) {
  f.validate();
  std::vector<double> out(f.y.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f.y[i] / 255.0;
  return Tensor::from({1, 1, f.height, f.width}, std::move(out));
}

Frame tensor_to_frame(const Tensor& t) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 3)
    throw InvalidShape("tensor_to_frame expects [1,3,H,W], got " + shape_str(t.shape()));
  const int h = static_cast<int>(t.dim(2)), w = static_cast<int>(t.dim(3));
  Frame f(w, h);
  auto d = t.data();
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  for (std::size_t i = 0; i < plane; ++i) f.y[i] = quantize_sample(d[i]);
  const int cw = f.chroma_width(), ch = f.chroma_height();
  auto downsample = [&](const double* src, std::vector<std::uint8_t>& c) {
    for (int cy = 0; cy < ch; ++cy)
      for (int cx = 0; cx < cw; ++cx) {
        double s = 0.0;
        int n = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int yy = 2 * cy + dy, xx = 2 * cx + dx;
            if (yy >= h || xx >= w) continue;
            s += std::clamp(src[yy * w + xx], 0.0, 1.0);
            ++n;
          }
        c[cy * cw + cx] = quantize_sample(s / n);
      }
  };
  downsample(d.data() + plane, f.u);
  downsample(d.data() + 2 * plane, f.v);
  return f;
}

}  // namespace precodec
