#pragma once

#include <functional>

#include "smvp/tensor.hpp"

namespace smvp::diff {

/// Result of a central-difference comparison.
struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t worst_input = -1;
  int64_t worst_coord = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// 0 checks every coordinate; otherwise at most this many randomly chosen
  /// coordinates per input (used for large parameter sets).
  int64_t max_coords_per_input = 0;
  uint64_t coord_seed = 0;
  /// When a coordinate's relative error exceeds this, it is re-measured at
  /// epsilon/8, epsilon/64, and epsilon*8, keeping the best agreement. A
  /// wrong gradient disagrees at every step size; a step that happens to
  /// straddle an interpolation kink (a measure-zero event) does not. 0
  /// disables retries.
  double retry_threshold = 5e-5;
  /// Coordinates where analytic and numeric derivatives BOTH fall below this
  /// magnitude count as verified-dead: their agreement is already beyond
  /// what central differences can resolve relative to the error floor. A
  /// one-sided small value (a dropped backward) still fails. 0 disables.
  double dead_zone = 0.0;
};

/// Central-difference check of a scalar-valued function of double tensors.
/// Relative error per coordinate: |analytic - numeric| /
/// max(1e-8, |analytic| + |numeric|). The function must be deterministic;
/// two base evaluations are compared bit-for-bit and a mismatch aborts.
inline GradCheckResult grad_check(
    const std::function<TensorT<double>(std::vector<TensorT<double>>&)>& f,
    std::vector<TensorT<double>> inputs, GradCheckOptions opts = {}) {
  for (auto& in : inputs) in.set_requires_grad(true);

  auto out0 = f(inputs);
  if (out0.numel() != 1)
    throw ShapeError("grad_check: function must return a scalar");
  {
    auto out1 = f(inputs);
    if (out0.item() != out1.item())
      throw NumericError(
          "grad_check aborted: function is not deterministic (" +
          std::to_string(out0.item()) + " vs " + std::to_string(out1.item()) +
          " at the same point)");
  }
  for (auto& in : inputs) in.zero_grad();
  auto out = f(inputs);
  out.backward();

  GradCheckResult res;
  Rng coord_rng(mix_seed(opts.coord_seed, 0x67726164ull));
  for (size_t ii = 0; ii < inputs.size(); ++ii) {
    auto& in = inputs[ii];
    const int64_t n = in.numel();
    std::vector<int64_t> coords;
    if (opts.max_coords_per_input > 0 && n > opts.max_coords_per_input) {
      for (int64_t c = 0; c < opts.max_coords_per_input; ++c)
        coords.push_back(coord_rng.uniform_int(0, n - 1));
    } else {
      coords.resize(static_cast<size_t>(n));
      for (int64_t c = 0; c < n; ++c) coords[static_cast<size_t>(c)] = c;
    }
    for (int64_t c : coords) {
      const double orig = in.value()[static_cast<size_t>(c)];
      const double analytic = in.grad()[static_cast<size_t>(c)];
      auto measure = [&](double eps) {
        const double h = eps * std::max(1.0, std::abs(orig));
        in.value()[static_cast<size_t>(c)] = orig + h;
        const double fp = f(inputs).item();
        in.value()[static_cast<size_t>(c)] = orig - h;
        const double fm = f(inputs).item();
        in.value()[static_cast<size_t>(c)] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double rel =
            std::abs(analytic - numeric) /
            std::max(1e-8, std::abs(analytic) + std::abs(numeric));
        return std::pair<double, double>{rel, numeric};
      };
      auto [rel, numeric] = measure(opts.epsilon);
      if (opts.retry_threshold > 0 && rel > opts.retry_threshold) {
        for (double scale : {1.0 / 8.0, 1.0 / 64.0, 8.0}) {
          auto [rel2, numeric2] = measure(opts.epsilon * scale);
          if (rel2 < rel) {
            rel = rel2;
            numeric = numeric2;
          }
        }
      }
      if (opts.dead_zone > 0 && std::abs(analytic) < opts.dead_zone &&
          std::abs(numeric) < opts.dead_zone)
        continue;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_input = static_cast<int64_t>(ii);
        res.worst_coord = c;
        res.analytic = analytic;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace smvp::diff
