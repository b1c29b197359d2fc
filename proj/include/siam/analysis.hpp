#pragma once

#include <optional>
#include <string>
#include <vector>

#include "siam/model.hpp"

namespace siam {

/// Per-layer parameters and FLOPs of one forward pass plus totals.
struct CostReport {
  std::string config_name;
  /// Clip shape [B, T_in, C, H, W] the FLOPs refer to; empty for params-only reports.
  Shape input_shape;
  std::vector<CostRow> rows;
  Index total_params = 0;
  Index total_macs = 0;
  Index total_elementwise = 0;
  /// 1 counts a multiply-accumulate as one FLOP, 2 as two.
  int flops_per_mac = 1;
  std::optional<ReferenceCost> reference;
  /// How the configured mixer widths map onto layers.
  std::string width_assumption;

  double total_flops() const {
    return static_cast<double>(total_macs) * flops_per_mac + static_cast<double>(total_elementwise);
  }
};

/// Relative deviation of `value` from `reference` and whether it lies within `tolerance`.
struct WindowCheck {
  double value = 0.0;
  double reference = 0.0;
  double delta = 0.0;
  bool within = false;
};
WindowCheck within_window(double value, double reference, double tolerance = 0.25);

template <typename Scalar>
CostReport count_params(const SiamModel<Scalar>& model);

/// `input_shape` must be [B, T_in, C, H, W] matching the model; B scales the FLOPs.
template <typename Scalar>
CostReport count_flops(const SiamModel<Scalar>& model, const Shape& input_shape, int flops_per_mac = 1);

/// Aligned text table with totals, the reference window (when known) and the
/// mixer width assumption.
std::string format_cost_report(const CostReport& report);
std::string cost_report_json(const CostReport& report);

}  // namespace siam
