#include "precodec/synth.hpp"

#include <algorithm>
#include <cmath>

#include "precodec/random.hpp"

namespace precodec {

namespace {

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Value noise: a coarse random lattice interpolated with a smooth fade.
struct Lattice {
  Index gh, gw;
  std::vector<double> v;
  Lattice(Rng& rng, Index grid_h, Index grid_w) : gh(grid_h + 2), gw(grid_w + 2), v(static_cast<std::size_t>(gh * gw)) {
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
  }
  double at(double y, double x) const {
    const Index y0 = static_cast<Index>(std::floor(y)), x0 = static_cast<Index>(std::floor(x));
    const double fy = smoothstep(0, 1, y - y0), fx = smoothstep(0, 1, x - x0);
    auto g = [&](Index a, Index b) {
      a = std::clamp<Index>(a, 0, gh - 1);
      b = std::clamp<Index>(b, 0, gw - 1);
      return v[static_cast<std::size_t>(a * gw + b)];
    };
    return (g(y0, x0) * (1 - fx) + g(y0, x0 + 1) * fx) * (1 - fy) + (g(y0 + 1, x0) * (1 - fx) + g(y0 + 1, x0 + 1) * fx) * fy;
  }
};

}  // namespace

Tensor synthetic_image(std::uint64_t seed, Index height, Index width) {
  if (height <= 0 || width <= 0) throw InvalidShape("synthetic image extents must be positive");
  Rng rng(seed * 0x9E3779B97F4A7C15ull + 12345);
  const Index plane = height * width;
  std::vector<double> img(static_cast<std::size_t>(3 * plane));
  const double scale = static_cast<double>(std::max(height, width));

  // Shading: a random planar gradient per channel.
  double base[3], gy[3], gx[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = c == 0 ? rng.uniform(0.3, 0.7) : rng.uniform(0.4, 0.6);
    gy[c] = rng.uniform(-0.3, 0.3) * (c == 0 ? 1.0 : 0.4);
    gx[c] = rng.uniform(-0.3, 0.3) * (c == 0 ? 1.0 : 0.4);
  }
  // Texture octaves with 1/f falloff.
  std::vector<Lattice> octaves;
  std::vector<double> cell, amp;
  for (int o = 0; o < 4; ++o) {
    const double cs = std::max(2.0, scale / (4.0 * std::pow(2.0, o)));
    cell.push_back(cs);
    amp.push_back(0.12 / std::pow(1.7, o));
    octaves.emplace_back(rng, static_cast<Index>(height / cs) + 1, static_cast<Index>(width / cs) + 1);
  }
  // Objects: discs and boxes with a slightly soft edge.
  struct Shape2 {
    bool disc;
    double cy, cx, ry, rx, angle;
    double col[3];
  };
  std::vector<Shape2> shapes(static_cast<std::size_t>(3 + rng.below(5)));
  for (auto& s : shapes) {
    s.disc = rng.uniform() < 0.5;
    s.cy = rng.uniform(0, static_cast<double>(height));
    s.cx = rng.uniform(0, static_cast<double>(width));
    s.ry = rng.uniform(0.05, 0.3) * scale;
    s.rx = rng.uniform(0.05, 0.3) * scale;
    s.angle = rng.uniform(0, M_PI);
    s.col[0] = rng.uniform(0.05, 0.95);
    s.col[1] = rng.uniform(0.3, 0.7);
    s.col[2] = rng.uniform(0.3, 0.7);
  }
  const double stripe_f = rng.uniform(0.15, 0.6), stripe_a = rng.uniform(0, M_PI);
  const double stripe_amp = rng.uniform(0.03, 0.1);

  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      const double ny = static_cast<double>(y) / scale, nx = static_cast<double>(x) / scale;
      double px[3];
      for (int c = 0; c < 3; ++c) px[c] = base[c] + gy[c] * (ny - 0.5) + gx[c] * (nx - 0.5);
      for (const auto& s : shapes) {
        const double dy = y - s.cy, dx = x - s.cx;
        const double u = (std::cos(s.angle) * dx + std::sin(s.angle) * dy) / s.rx;
        const double v = (-std::sin(s.angle) * dx + std::cos(s.angle) * dy) / s.ry;
        const double d = s.disc ? std::sqrt(u * u + v * v) : std::max(std::abs(u), std::abs(v));
        const double soft = 1.5 / std::min(s.rx, s.ry);
        const double a = 1.0 - smoothstep(1.0 - soft, 1.0 + soft, d);
        for (int c = 0; c < 3; ++c) px[c] = px[c] * (1 - a) + s.col[c] * a;
      }
      double tex = 0.0;
      for (std::size_t o = 0; o < octaves.size(); ++o) tex += amp[o] * octaves[o].at(y / cell[o], x / cell[o]);
      const double stripe = stripe_amp * std::sin((std::cos(stripe_a) * x + std::sin(stripe_a) * y) * stripe_f) *
                            smoothstep(0.2, 0.6, 0.5 + 0.5 * octaves[0].at(y / cell[0] + 3.1, x / cell[0] + 1.7));
      px[0] += tex + stripe;
      px[1] += 0.3 * tex;
      px[2] -= 0.3 * tex;
      for (int c = 0; c < 3; ++c) img[static_cast<std::size_t>(c * plane + y * width + x)] = std::clamp(px[c], 0.0, 1.0);
    }
  return Tensor::from({1, 3, height, width}, std::move(img));
}

Frame synthetic_frame(std::uint64_t seed, int width, int height) {
  return tensor_to_frame(synthetic_image(seed, height, width));
}

VideoSeq synthetic_video(std::uint64_t seed, int width, int height, int frames, int dy, int dx) {
  if (frames <= 0) throw InvalidArgument("frame count must be positive");
  const int pad_y = std::abs(dy) * (frames - 1), pad_x = std::abs(dx) * (frames - 1);
  const Tensor scene = synthetic_image(seed, height + pad_y, width + pad_x);
  const Index sw = width + pad_x, sp = static_cast<Index>(height + pad_y) * sw;
  VideoSeq seq;
  for (int f = 0; f < frames; ++f) {
    // Content moves by (dy,dx): frame f views the scene from an offset that
    // decreases along the motion direction.
    const int oy = dy >= 0 ? pad_y - dy * f : -dy * f;
    const int ox = dx >= 0 ? pad_x - dx * f : -dx * f;
    std::vector<double> v(static_cast<std::size_t>(3) * width * height);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
          v[(static_cast<std::size_t>(c) * height + y) * width + x] = scene[c * sp + (y + oy) * sw + (x + ox)];
    seq.frames.push_back(tensor_to_frame(Tensor::from({1, 3, height, width}, std::move(v))));
  }
  return seq;
}

}  // namespace precodec
