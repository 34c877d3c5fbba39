#pragma once

#include <functional>
#include <string>
#include <vector>

#include "afd/tensor.hpp"

namespace afd {

using ScalarFn = std::function<double(const Tensor&)>;

/// Central-difference gradient of `f` at `x`:
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every coordinate i.
/// `f` is evaluated twice at `x` first; differing results are rejected as
/// non-deterministic.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

/// ||a - b|| / max(||a||, ||b||), 0 when both are zero.
double relative_error(std::span<const double> a, std::span<const double> b);

struct GradCheckResult {
  std::string name;
  double rel_error = 0.0;
  double max_abs_error = 0.0;
  bool vanishing = false;  // both gradients below the absolute floor
  bool passed = false;
};

/// Checks tape gradients of `loss_of` against finite differences for each
/// tensor in `params`. `loss_of` must rebuild the graph from the current
/// parameter values on each call.
///
/// Relative error is meaningless for a gradient that is identically zero
/// (e.g. a key bias under softmax shift invariance): there the finite
/// difference is pure rounding noise. Such a tensor passes when every
/// component of both gradients is below `abs_floor` and is flagged `vanishing`.
std::vector<GradCheckResult> check_gradients(const std::function<Tensor()>& loss_of,
                                             const std::vector<std::pair<std::string, Tensor>>& params,
                                             double eps = 1e-5, double tolerance = 1e-4, double abs_floor = 1e-8);

}  // namespace afd
