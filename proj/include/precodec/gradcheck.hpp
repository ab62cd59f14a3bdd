#pragma once

#include <functional>
#include <string>
#include <vector>

#include "precodec/tensor.hpp"

namespace precodec {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Coordinates probed per input; 0 probes every coordinate.
  Index probes_per_input = 0;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  Index probes = 0;
  bool passed = false;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares tape gradients of f at `inputs` with central finite differences,
// in 64-bit precision. The error of each probe is |analytic - numeric|
// divided by the largest magnitude among all probed gradients (floored at
// 1e-8), so near-zero components do not dominate.
GradCheckResult check_gradients(const std::string& name, const ScalarFn& f, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options = {});

// Named finite-difference suite over every differentiable op and model path.
struct GradSuite {
  std::string name;
  std::function<std::vector<GradCheckResult>()> run;
};

const std::vector<GradSuite>& gradient_suites();

}  // namespace precodec
