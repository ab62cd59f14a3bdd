#include <cmath>

#include "doctest.h"
#include "precodec/gradcheck.hpp"
#include "precodec/ops.hpp"
#include "precodec/resample.hpp"
#include "unit/test_util.hpp"

using namespace precodec;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

// Explicit double loop over output pixels and 2-D taps.
std::vector<double> dense_resize_oracle(const Tensor& img, Index ho, Index wo, bool lanczos) {
  const Index n = img.dim(0) * img.dim(1), hi = img.dim(2), wi = img.dim(3);
  const double sy = static_cast<double>(hi) / ho, sx = static_cast<double>(wi) / wo;
  const double ky = std::max(1.0, sy), kx = std::max(1.0, sx);
  const double a = lanczos ? 3.0 : 2.0;
  auto kern = [lanczos](double t) {
    if (lanczos) {
      t = std::abs(t);
      if (t == 0) return 1.0;
      if (t >= 3) return 0.0;
      return 3 * std::sin(M_PI * t) * std::sin(M_PI * t / 3) / (M_PI * M_PI * t * t);
    }
    t = std::abs(t);
    if (t <= 1) return 1.5 * t * t * t - 2.5 * t * t + 1;
    if (t < 2) return -0.5 * t * t * t + 2.5 * t * t - 4 * t + 2;
    return 0.0;
  };
  std::vector<double> out;
  for (Index p = 0; p < n; ++p)
    for (Index y = 0; y < ho; ++y)
      for (Index x = 0; x < wo; ++x) {
        const double cy = (y + 0.5) * sy - 0.5, cx = (x + 0.5) * sx - 0.5;
        double s = 0, wsum = 0;
        for (Index i = static_cast<Index>(std::floor(cy - a * ky)) - 1; i <= cy + a * ky + 1; ++i)
          for (Index j = static_cast<Index>(std::floor(cx - a * kx)) - 1; j <= cx + a * kx + 1; ++j) {
            const double w = kern((i - cy) / ky) * kern((j - cx) / kx);
            const Index ii = std::clamp<Index>(i, 0, hi - 1), jj = std::clamp<Index>(j, 0, wi - 1);
            s += w * img[(p * hi + ii) * wi + jj];
            wsum += w;
          }
        out.push_back(s / wsum);
      }
  return out;
}

Tensor center_grid(Index h, Index w, Index hi, Index wi) {
  // Coordinates of input pixel centers (every other one when smaller).
  std::vector<double> v;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      v.push_back(normalize_coord(y * hi / h, hi));
      v.push_back(normalize_coord(x * wi / w, wi));
    }
  return Tensor::from({1, h, w, 2}, v);
}

}  // namespace

TEST_CASE("normalize coordinate examples") {
  CHECK(normalize_coord(0, 2) == -0.5);
  CHECK(normalize_coord(3, 4) == 0.75);
  CHECK(normalize_coord(1, 4) == -0.25);
  CHECK(normalize_coord(2, 4) == 0.25);
  CHECK(denormalize_coord(-0.5, 2) == 0.0);
  CHECK(denormalize_coord(0.75, 4) == 3.0);
  CHECK_THROWS_AS(normalize_coord(4, 4), InvalidArgument);
  CHECK_THROWS_AS(normalize_coord(-1, 4), InvalidArgument);
}

TEST_CASE("normalize and denormalize are exact inverses up to 4096") {
  bool ok = true;
  for (Index h = 1; h <= 4096; ++h)
    for (Index r = 0; r < h; ++r) {
      const double p = normalize_coord(r, h);
      ok = ok && denormalize_coord(p, h) == static_cast<double>(r) && p == -normalize_coord(h - 1 - r, h);
    }
  CHECK(ok);
}

TEST_CASE("sampling error examples") {
  for (Index r = 0; r < 7; ++r) CHECK(sampling_error_h(r, make_plan(7, 7, 7, 7)) == 0.0);
  CHECK(std::abs(sampling_error_h(0, make_plan(4, 4, 2, 2))) == 0.25);
  // Brute-force nearest input center for 3 -> 2.
  const ScalePlan p = make_plan(3, 5, 2, 3);
  for (Index r = 0; r < 2; ++r) {
    const double rn = normalize_coord(r, 2);
    double best = 1e9;
    for (Index j = 0; j < 3; ++j) {
      const double d = rn - normalize_coord(j, 3);
      if (std::abs(d) < std::abs(best)) best = d;
    }
    CHECK(std::abs(sampling_error_h(r, p) - best) < 1e-12);
  }
  CHECK_THROWS_AS(sampling_error_h(2, p), InvalidArgument);
}

TEST_CASE("sampling error is bounded by one input pixel phase") {
  for (Index hi : {5, 8, 13, 64})
    for (Index ho = 1; ho <= hi; ++ho) {
      const ScalePlan p = make_plan(hi, hi, ho, ho);
      for (Index r = 0; r < ho; ++r) CHECK(std::abs(sampling_error_h(r, p)) <= 1.0 / hi + 1e-12);
    }
}

TEST_CASE("resize matches the dense oracle on random sizes and ratios") {
  Rng rng(17);
  const std::vector<std::array<Index, 4>> cases{{8, 8, 5, 3}, {10, 10, 4, 4}, {6, 6, 4, 4}, {15, 9, 6, 6},
                                                 {7, 11, 7, 11}, {6, 4, 12, 9}, {20, 12, 8, 8}};
  for (const auto& c : cases) {
    Tensor img = random_tensor(rng, {1, 2, c[0], c[1]}, 0, 1);
    const ScalePlan plan = make_plan(c[0], c[1], c[2], c[3]);
    CAPTURE(c[0]);
    CAPTURE(c[2]);
    CHECK(max_abs_diff(bicubic_resize(img, plan).to_vector(), dense_resize_oracle(img, c[2], c[3], false)) < 1e-5);
    CHECK(max_abs_diff(lanczos_resize(img, plan).to_vector(), dense_resize_oracle(img, c[2], c[3], true)) < 1e-5);
  }
}

TEST_CASE("resize identity and constant fixed points") {
  Rng rng(3);
  Tensor img = random_tensor(rng, {1, 3, 9, 7});
  const ScalePlan same = make_plan(9, 7, 9, 7);
  CHECK(max_abs_diff(bicubic_resize(img, same), img) < 1e-6);
  CHECK(max_abs_diff(lanczos_resize(img, same), img) < 1e-6);
  Tensor k = Tensor::full({1, 1, 12, 10}, 0.37);
  for (auto [ho, wo] : std::vector<std::pair<Index, Index>>{{5, 4}, {24, 31}, {1, 1}, {7, 10}}) {
    for (double v : bicubic_resize(k, make_plan(12, 10, ho, wo)).to_vector()) CHECK(std::abs(v - 0.37) < 1e-12);
    for (double v : lanczos_resize(k, make_plan(12, 10, ho, wo)).to_vector()) CHECK(std::abs(v - 0.37) < 1e-12);
  }
}

TEST_CASE("down then up reproduces a linear ramp away from the border") {
  const Index n = 40;
  std::vector<double> v;
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) v.push_back(0.1 + 0.01 * x + 0.005 * y);
  Tensor ramp = Tensor::from({1, 1, n, n}, v);
  for (Index lo : {20, 16, 27}) {
    Tensor back = bicubic_resize(bicubic_resize(ramp, make_plan(n, n, lo, lo)), make_plan(lo, lo, n, n));
    double worst = 0;
    // 2-pixel border at S=2; non-integer ratios clamp a little deeper.
    const Index border = lo == 20 ? 2 : 4;
    for (Index y = border; y < n - border; ++y)
      for (Index x = border; x < n - border; ++x) worst = std::max(worst, std::abs(back[y * n + x] - v[y * n + x]));
    CAPTURE(lo);
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("resize gradient") {
  Rng rng(4);
  for (auto [ho, wo] : std::vector<std::pair<Index, Index>>{{3, 5}, {9, 4}, {6, 6}}) {
    Tensor img = random_tensor(rng, {1, 2, 6, 6});
    Tensor probe = random_tensor(rng, {1, 2, ho, wo});
    const ScalePlan plan = make_plan(6, 6, ho, wo);
    for (Filter f : {Filter::kBicubic, Filter::kLanczos}) {
      auto r = check_gradients("resize", [&](const std::vector<Tensor>& in) { return sum(mul(resize(in[0], plan, f), probe)); }, {img});
      CHECK(r.max_rel_error < 1e-6);
    }
  }
}

TEST_CASE("grid sample reproduces nodes and constants") {
  Rng rng(5);
  Tensor img = random_tensor(rng, {1, 2, 8, 6});
  Tensor out = grid_sample_bicubic(img, center_grid(8, 6, 8, 6));
  CHECK(max_abs_diff(out, img) < 1e-6);
  Tensor sub = grid_sample_bicubic(img, center_grid(4, 3, 8, 6));
  for (Index c = 0; c < 2; ++c)
    for (Index y = 0; y < 4; ++y)
      for (Index x = 0; x < 3; ++x) CHECK(std::abs(sub[(c * 4 + y) * 3 + x] - img[(c * 8 + 2 * y) * 6 + 2 * x]) < 1e-6);
  Tensor k = Tensor::full({1, 1, 5, 5}, 0.8);
  Tensor coords = Tensor::full({1, 3, 3, 2}, 0.13);
  for (double v : grid_sample_bicubic(k, coords).to_vector()) CHECK(std::abs(v - 0.8) < 1e-12);
}

TEST_CASE("grid sample agrees with bicubic resize at unit scale only in the interior") {
  // At S=1 the base grid hits input centers exactly.
  Rng rng(6);
  Tensor img = random_tensor(rng, {1, 1, 7, 7});
  const ScalePlan p = make_plan(7, 7, 7, 7);
  CHECK(max_abs_diff(grid_sample_bicubic(img, base_grid(p)), bicubic_resize(img, p)) < 1e-9);
}

TEST_CASE("grid sample gradients in features and coordinates") {
  for (int trial = 0; trial < 3; ++trial) {
    Rng rng(static_cast<std::uint64_t>(50 + trial));
    Tensor img = random_tensor(rng, {1, 2, 6 + trial, 5});
    Tensor coords = random_tensor(rng, {1, 3, 4, 2}, -0.95, 0.95);
    Tensor probe = random_tensor(rng, {1, 2, 3, 4});
    auto f = [probe](const std::vector<Tensor>& in) { return sum(mul(grid_sample_bicubic(in[0], in[1]), probe)); };
    CHECK(check_gradients("grid_sample", f, {img, coords}, {.step = 1e-4, .tolerance = 1e-5}).passed);
    CHECK(check_gradients("grid_sample", f, {img, coords}).max_rel_error < 1e-6);
  }
}

TEST_CASE("deformable compensated sample") {
  Rng rng(7);
  Tensor img = random_tensor(rng, {1, 3, 8, 8});
  const ScalePlan plan = make_plan(8, 8, 5, 6);
  Tensor base = base_grid(plan);
  Tensor plain = grid_sample_bicubic(img, base);
  SUBCASE("zero weights collapse to the base query") {
    Tensor off = random_tensor(rng, {1, 2, 5, 6, 2}, -0.2, 0.2);
    Tensor w = Tensor::zeros({1, 2, 3, 5, 6});
    CHECK(max_abs_diff(deformable_compensated_sample(img, base, off, w), plain) == 0.0);
  }
  SUBCASE("zero offsets and 1/K weights double the query") {
    const Index k = 4;
    Tensor off = Tensor::zeros({1, k, 5, 6, 2});
    Tensor w = Tensor::full({1, k, 3, 5, 6}, 1.0 / k);
    CHECK(max_abs_diff(deformable_compensated_sample(img, base, off, w), mul_scalar(plain, 2.0)) < 1e-12);
  }
  SUBCASE("K=2 matches a hand composition") {
    Tensor off = random_tensor(rng, {1, 2, 5, 6, 2}, -0.3, 0.3);
    Tensor w = random_tensor(rng, {1, 2, 3, 5, 6});
    std::vector<double> expect = plain.to_vector();
    for (Index k = 0; k < 2; ++k) {
      std::vector<double> c = base.to_vector();
      for (std::size_t i = 0; i < c.size(); ++i) c[i] += off[static_cast<Index>(k * c.size() + i)];
      Tensor s = grid_sample_bicubic(img, Tensor::from({1, 5, 6, 2}, c));
      for (Index i = 0; i < 3 * 30; ++i) expect[static_cast<std::size_t>(i)] += w[k * 90 + i] * s[i];
    }
    CHECK(max_abs_diff(deformable_compensated_sample(img, base, off, w).to_vector(), expect) < 1e-6);
  }
  SUBCASE("tap count mismatch") {
    CHECK_THROWS_AS(deformable_compensated_sample(img, base, Tensor::zeros({1, 2, 5, 6, 2}), Tensor::zeros({1, 3, 3, 5, 6})),
                    InvalidShape);
  }
  SUBCASE("gradients in features, offsets and weights") {
    Tensor off = random_tensor(rng, {1, 2, 5, 6, 2}, -0.3, 0.3);
    Tensor w = random_tensor(rng, {1, 2, 3, 5, 6});
    Tensor probe = random_tensor(rng, {1, 3, 5, 6});
    auto f = [&](const std::vector<Tensor>& in) { return sum(mul(deformable_compensated_sample(in[0], base, in[1], in[2]), probe)); };
    CHECK(check_gradients("deformable", f, {img, off, w}).max_rel_error < 1e-6);
  }
}

TEST_CASE("bilinear warp") {
  Rng rng(8);
  Tensor k = Tensor::full({1, 2, 6, 6}, 0.4);
  Tensor flow = random_tensor(rng, {1, 2, 6, 6}, -3, 3);
  for (double v : warp_bilinear(k, flow).to_vector()) CHECK(std::abs(v - 0.4) < 1e-12);
  Tensor img = random_tensor(rng, {1, 1, 6, 6});
  // Integer flow (0, 1): out(y,x) = in(y, x-1).
  std::vector<double> fv(72, 0.0);
  for (int i = 36; i < 72; ++i) fv[static_cast<std::size_t>(i)] = 1.0;
  Tensor shifted = warp_bilinear(img, Tensor::from({1, 2, 6, 6}, fv));
  for (Index y = 0; y < 6; ++y)
    for (Index x = 1; x < 6; ++x) CHECK(shifted[y * 6 + x] == img[y * 6 + x - 1]);
  Tensor probe = random_tensor(rng, {1, 1, 6, 6});
  Tensor fl = random_tensor(rng, {1, 2, 6, 6}, -1.3, 1.3);
  CHECK(check_gradients("warp", [&](const std::vector<Tensor>& in) { return sum(mul(warp_bilinear(in[0], fl), probe)); }, {img})
            .max_rel_error < 1e-6);
}
