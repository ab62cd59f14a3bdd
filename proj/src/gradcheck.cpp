#include "precodec/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "precodec/random.hpp"

namespace precodec {

GradCheckResult check_gradients(const std::string& name, const ScalarFn& f, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options) {
  PrecisionGuard exact(Precision::kFloat64);
  std::vector<Tensor> leaves;
  for (const Tensor& t : inputs) leaves.push_back(t.as_leaf(true));

  Tape tape;
  Tensor loss;
  {
    auto rec = tape.record();
    loss = f(leaves);
  }
  tape.backward(loss);

  Rng rng(options.seed);
  std::vector<double> analytic, numeric;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const Index n = leaves[li].numel();
    std::vector<Index> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), 0);
    if (options.probes_per_input > 0 && options.probes_per_input < n) {
      for (Index i = 0; i < options.probes_per_input; ++i) {
        const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(coords[static_cast<std::size_t>(i)], coords[static_cast<std::size_t>(j)]);
      }
      coords.resize(static_cast<std::size_t>(options.probes_per_input));
    }
    // Inputs the loss does not depend on have no gradient recorded.
    const std::vector<double> g = leaves[li].grad() ? *leaves[li].grad() : std::vector<double>(static_cast<std::size_t>(n), 0.0);
    for (Index c : coords) {
      auto eval_at = [&](double delta) {
        std::vector<Tensor> probe = leaves;
        std::vector<double> v = leaves[li].to_vector();
        v[static_cast<std::size_t>(c)] += delta;
        probe[li] = Tensor::from(leaves[li].shape(), std::move(v));
        return f(probe).item();
      };
      const double h = options.step;
      numeric.push_back((eval_at(h) - eval_at(-h)) / (2.0 * h));
      analytic.push_back(g[static_cast<std::size_t>(c)]);
    }
  }

  double scale = 1e-8;
  for (std::size_t i = 0; i < analytic.size(); ++i) scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  GradCheckResult r;
  r.name = name;
  r.probes = static_cast<Index>(analytic.size());
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic[i] - numeric[i]) / scale);
  }
  r.passed = r.max_rel_error < options.tolerance;
  return r;
}

}  // namespace precodec
