#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "siam/tensor.hpp"

namespace siam {

/// Per-frame-index values (averaged over samples) and their mean.
struct FrameCurve {
  std::vector<double> per_frame;
  double mean = 0.0;
};

/// Squared error summed over C*H*W of each frame, then averaged over samples
/// and frames. Inputs are [B, T, C, H, W].
template <typename Scalar>
FrameCurve mse_framewise(const Tensor<Scalar>& pred, const Tensor<Scalar>& target);

/// As mse_framewise with absolute error.
template <typename Scalar>
FrameCurve mae_framewise(const Tensor<Scalar>& pred, const Tensor<Scalar>& target);

struct SsimValue {
  double value = 0.0;
  /// Frame smaller than the window: global statistics were used instead.
  bool global_fallback = false;
};

/// Windowed SSIM of two [C, H, W] frames with data range 1: 11x11 Gaussian
/// window (sigma 1.5), K1 = 0.01, K2 = 0.03, valid windows only, channels averaged.
template <typename Scalar>
SsimValue ssim(const Tensor<Scalar>& pred_frame, const Tensor<Scalar>& target_frame);

/// Per-frame SSIM over [B, T, C, H, W], averaged over samples.
template <typename Scalar>
FrameCurve ssim_framewise(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, bool* global_fallback = nullptr);

struct EvalReport {
  Index samples = 0;
  Index frames = 0;
  /// Elements per frame (C*H*W); divides the frame sums into per-pixel values.
  Index frame_size = 0;
  std::uint64_t fingerprint = 0;
  FrameCurve mse;
  FrameCurve mae;
  FrameCurve ssim;
  bool ssim_global_fallback = false;

  double mse_per_pixel() const { return mse.mean / static_cast<double>(frame_size); }
  double mae_per_pixel() const { return mae.mean / static_cast<double>(frame_size); }
};

template <typename Scalar>
EvalReport evaluate(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, std::uint64_t fingerprint = 0);

/// Aligned text table: one row per predicted frame plus the mean row.
std::string format_report(const EvalReport& report);
/// Machine-readable record (JSON).
std::string report_json(const EvalReport& report);

}  // namespace siam
