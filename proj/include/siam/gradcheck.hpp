#pragma once

#include <functional>
#include <string>
#include <vector>

#include "siam/tensor.hpp"

namespace siam {

/// Comparison of one input's analytic gradient against central differences.
struct GradCheckResult {
  std::string name;
  Index elements = 0;
  double max_abs_error = 0.0;
  /// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor) with floor = max(1e-3 * max|n|, 1e-8).
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
};

/// Scalar-valued function of named inputs, evaluated either on tracked
/// tensors (for the analytic pass) or on plain ones (for differencing).
using LossFunction = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of `loss` at `inputs` with central finite
/// differences, one result per input.
std::vector<GradCheckResult> check_gradients(const LossFunction& loss, const std::vector<Tensor<double>>& inputs,
                                             const std::vector<std::string>& names,
                                             const GradCheckOptions& options = {});

/// Relative-error metric used by check_gradients, exposed for reuse.
GradCheckResult compare_gradients(const std::string& name, const Tensor<double>& analytic,
                                  const Tensor<double>& numeric, double tolerance);

}  // namespace siam
