#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rcnn/tensor.hpp"

namespace rcnn {

// Builds a scalar loss from tensors captured by the closure. Must be
// deterministic: dropout off, no hidden randomness.
using LossBuilder = std::function<Tensor(Graph&)>;

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every coordinate; otherwise a seeded sample of this many per
  // tensor, always including the coordinate with the largest analytic gradient.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  // Lower bound on the error denominator, relative to max(1, |loss|).
  // Gradients far below the loss scale cannot be resolved by central
  // differences (rounding in the loss is ~1e-16·|loss|/h), so for them the
  // check degrades to an absolute one instead of comparing noise with noise.
  double noise_floor = 1e-4;
};

struct TensorGradError {
  std::string name;
  double relative_error = 0.0;
  std::size_t coords_checked = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::vector<TensorGradError> tensors;
};

// Compares reverse-mode gradients of `loss` against central differences
// (f(x+h) − f(x−h)) / 2h. Per tensor the error is
//   max|a − n| / max(noise_floor·max(1, |loss|), max|a| + max|n|)
// over the checked coordinates; the result carries the worst tensor.
// Inputs are perturbed in place and restored; their grad buffers are reset.
GradCheckResult grad_check(const LossBuilder& loss, const ParameterList& inputs, const GradCheckOptions& options = {});

}  // namespace rcnn
