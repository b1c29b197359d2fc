#include "siam/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace siam {

GradCheckResult compare_gradients(const std::string& name, const Tensor<double>& analytic,
                                  const Tensor<double>& numeric, double tolerance) {
  if (analytic.shape() != numeric.shape()) {
    throw ShapeError("gradient shapes differ for '" + name + "'");
  }
  GradCheckResult r;
  r.name = name;
  r.elements = analytic.size();
  const double scale = numeric.values().abs().maxCoeff();
  const double floor = std::max(1e-3 * scale, 1e-8);
  for (Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double err = std::abs(a - n);
    r.max_abs_error = std::max(r.max_abs_error, err);
    r.max_rel_error = std::max(r.max_rel_error, err / std::max({std::abs(a), std::abs(n), floor}));
  }
  r.passed = r.max_rel_error < tolerance;
  return r;
}

std::vector<GradCheckResult> check_gradients(const LossFunction& loss, const std::vector<Tensor<double>>& inputs,
                                             const std::vector<std::string>& names, const GradCheckOptions& options) {
  if (names.size() != inputs.size()) throw ShapeError("check_gradients: one name per input required");
  Tape<double> tape;
  std::vector<Tensor<double>> watched;
  watched.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) watched.push_back(tape.watch(inputs[i], names[i]));
  auto analytic = tape.backward(loss(watched));

  std::vector<Tensor<double>> probe;
  probe.reserve(inputs.size());
  for (const auto& t : inputs) probe.push_back(t.detached());

  std::vector<GradCheckResult> results;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor<double> numeric(inputs[i].shape());
    double* out = numeric.mutable_data();
    for (Index j = 0; j < inputs[i].size(); ++j) {
      const double x0 = inputs[i][j];
      probe[i].mutable_data()[j] = x0 + options.step;
      const double up = loss(probe).item();
      probe[i].mutable_data()[j] = x0 - options.step;
      const double down = loss(probe).item();
      probe[i].mutable_data()[j] = x0;
      out[j] = (up - down) / (2.0 * options.step);
    }
    results.push_back(compare_gradients(names[i], analytic.at(names[i]), numeric, options.tolerance));
  }
  return results;
}

}  // namespace siam
